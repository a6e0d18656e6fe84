import numpy as np
import pytest

from duel import TrainableDenoiser, fit_tabular, train

# sequences over {a=0, b=1, c=2}
AA_BB = [np.array([0, 0]), np.array([1, 1])]
AB_BA = [np.array([0, 1]), np.array([1, 0])]
# asymmetric L=3 corpus; the reference module derives its exact goldens
ASYM3 = [np.array(c) for c in
         [(0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 1, 0), (0, 0, 1), (0, 0, 0), (1, 1, 1)]]


def probs_to_logp(rows):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(rows, dtype=float))


@pytest.fixture(scope="session")
def aa_bb():
    return fit_tabular(AA_BB)


@pytest.fixture(scope="session")
def asym3():
    return fit_tabular(ASYM3)


@pytest.fixture(scope="session")
def mlp4():
    corpus = [np.array(c) for c in [[0, 1, 2, 0], [1, 1, 0, 2], [2, 0, 1, 1], [0, 0, 1, 2]]]
    return train(TrainableDenoiser(4, 3, hidden=8, seed=1), corpus, 200, 0.1)


# -- acceptance reporting ----------------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config.stash[_ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (report.when == "call" or report.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        crash = getattr(report.longrepr, "reprcrash", None)
        detail = crash.message if crash else "error"
    status = "PASS" if report.passed else "FAIL"
    line = f"{status}  criterion {number:>2}  {title}: {detail}"
    item.config.stash[_ACCEPTANCE][number] = line


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
