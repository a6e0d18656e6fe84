"""Brute-force property suite behind ``duel verify``.

Each check enumerates small sequence spaces and compares the sampler's exact
likelihood against independent computations. Sizes come from
:class:`VerifyCaps`; the ``DUEL_ENUM_CAP`` environment variable lowers or
raises the length cap.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .denoiser import (Denoiser, TrainableDenoiser, elbo_exhaustive_mc_mean, fit_tabular,
                       train)
from .engine import (aoarm_elbo_exhaustive, duel_exact_loglik, duel_sample_many,
                     uniform_policy_exact_loglik)
from .errors import DuelError
from .oracle import (UNIFORM, empirical_distribution, induced_distribution,
                     marginal_bruteforce, masking_order_histogram)
from .rng import make_rng
from .rules import FixedOrder, Rule, parse_rule

COLLAPSE_TOL = 1e-9
NORM_TOL = 1e-8
TV_SAMPLING = 0.01
TV_POLICY = 1e-4
JENSEN_SLACK = 1e-12
ELBO_TOL = 1e-10


@dataclass(frozen=True)
class VerifyCaps:
    length: int = 4
    vocab: int = 3
    samples: int = 100_000
    trials: int = 100_000

    @classmethod
    def from_env(cls, **overrides) -> "VerifyCaps":
        caps = cls(**overrides)
        raw = os.environ.get("DUEL_ENUM_CAP")
        if raw:
            caps = cls(int(raw), caps.vocab, caps.samples, caps.trials)
        if caps.length < 1 or caps.vocab < 1:
            raise ValueError("enumeration caps must be positive")
        return caps


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float = 0.0
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<22} max_err={self.max_error:.3e}  {self.detail}"


@dataclass
class VerifyReport:
    caps: VerifyCaps
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def format(self) -> str:
        lines = [c.line() for c in self.checks]
        total = sum(c.seconds for c in self.checks)
        verdict = "all checks passed" if self.passed else "verification FAILED"
        lines.append(f"{verdict} ({len(self.checks)} checks, {total:.1f}s)")
        return "\n".join(lines)


# -- fixtures ----------------------------------------------------------------------------


def standard_rules(length: int) -> list[Rule]:
    """Rule variants exercised at sequence length ``length``."""
    specs = ["l2r:k=1", "greedy:k=1", "margin:k=1", "thresh:mu=0.5", "thresh:mu=0.9",
             "klass:mu=0.5,nu=0.1"]
    if length >= 2:
        specs += ["l2r:k=2", "greedy:k=2", f"margin:k={length}"]
    if length >= 2 and length % 2 == 0:
        specs.append("block:2:greedy:k=1")
    rules = [parse_rule(s) for s in specs]
    rules.append(FixedOrder(tuple(reversed(range(length)))))
    return rules


def toy_corpus(length: int, n_tokens: int, size: int = 6, seed: int = 0) -> list[np.ndarray]:
    return list(make_rng(seed, length, n_tokens).integers(0, n_tokens, size=(size, length)))


@lru_cache(maxsize=None)
def toy_denoisers(length: int, n_tokens: int) -> tuple[tuple[str, Denoiser], ...]:
    """A smoothed tabular model and a briefly trained MLP; both have full support."""
    corpus = toy_corpus(length, n_tokens)
    tab = fit_tabular(corpus, lam=0.1, n_tokens=n_tokens)
    mlp = train(TrainableDenoiser(length, n_tokens, hidden=8, seed=length), corpus, 200, 0.1)
    return (("tabular", tab), ("mlp", mlp))


def _space(length, n_tokens):
    return [np.array(x) for x in product(range(n_tokens), repeat=length)]


def _shapes(caps: VerifyCaps):
    return [(L, V) for L in range(1, min(caps.length, 4) + 1)
            for V in range(2, min(caps.vocab, 3) + 1)] or [(1, 1)]


def _timed(name, fn) -> CheckResult:
    start = time.perf_counter()
    try:
        result = fn()
    except DuelError as exc:
        result = CheckResult(name, False, math.inf, f"{type(exc).__name__}: {exc}")
    result.seconds = time.perf_counter() - start
    return result


# -- checks ------------------------------------------------------------------------------


def check_progress(caps, extra_rules) -> tuple[CheckResult, set]:
    """Every rule reveals at least one masked position at every visited state."""
    bad: dict[str, str] = {}
    for L, V in _shapes(caps):
        _, d = toy_denoisers(L, V)[0]
        for rule in standard_rules(L) + list(extra_rules):
            if rule.spec in bad:
                continue
            for x in _space(L, V):
                try:
                    duel_exact_loglik(d, rule, x)
                except DuelError as exc:
                    bad[rule.spec] = (f"rule {rule.spec!r} at L={L}, x={x.tolist()}:"
                                      f" {type(exc).__name__}: {exc}")
                    break
    detail = "; ".join(bad.values()) if bad else "every rule made progress at every state"
    return CheckResult("progress", not bad, float(len(bad)), detail), set(bad)


def check_collapse(caps, extra_rules, skip) -> CheckResult:
    worst, count, terms_ok = 0.0, 0, True
    for L, V in _shapes(caps):
        for _, d in toy_denoisers(L, V):
            for rule in standard_rules(L) + list(extra_rules):
                if rule.spec in skip:
                    continue
                for x in _space(L, V):
                    brute = marginal_bruteforce(d, rule, x, cap=caps.length)
                    exact = duel_exact_loglik(d, rule, x).loglik
                    worst = max(worst, abs(brute.loglik - exact))
                    terms_ok &= brute.nonzero_terms == 1
                    count += 1
    ok = worst <= COLLAPSE_TOL and terms_ok
    detail = f"{count} (rule, x) pairs; single nonzero summand: {terms_ok}"
    return CheckResult("collapse", ok, worst, detail)


def check_normalization(caps, extra_rules, skip) -> CheckResult:
    worst, n = 0.0, 0
    shapes = [(L, V) for L, V in [(3, 2), (2, 3)] if L <= caps.length and V <= caps.vocab]
    for L, V in shapes or [(1, max(1, min(2, caps.vocab)))]:
        for _, d in toy_denoisers(L, V):
            for rule in standard_rules(L) + list(extra_rules):
                if rule.spec in skip:
                    continue
                worst = max(worst, abs(induced_distribution(d, rule).total - 1.0))
                n += 1
    return CheckResult("normalization", worst <= NORM_TOL, worst, f"{n} induced tables")


def check_sampling(caps, extra_rules, skip) -> CheckResult:
    L = min(3, caps.length)
    V = min(2, caps.vocab)
    _, d = toy_denoisers(L, V)[0]
    rules = [r for r in [parse_rule("greedy:k=1"), parse_rule("thresh:mu=0.5")]
             if r.spec not in skip]
    worst = 0.0
    for rule in rules:
        table = induced_distribution(d, rule)
        draws = duel_sample_many(d, rule, caps.samples, seed=20240)
        worst = max(worst, table.tv(empirical_distribution(draws)))
    return CheckResult("sampling-consistency", worst < TV_SAMPLING, worst,
                       f"{caps.samples} draws per rule, TV bound {TV_SAMPLING}")


def policy_dependence_pair() -> tuple[Denoiser, Rule, Rule]:
    """Trained inexact denoiser on {ab, ba} with the two fixed orders."""
    corpus = [np.array([0, 1]), np.array([1, 0])]
    d = train(TrainableDenoiser(2, 2, hidden=4, seed=3), corpus, 100, 0.2)
    return d, FixedOrder((0, 1)), FixedOrder((1, 0))


def check_policy_dependence(caps) -> CheckResult:
    if caps.length < 2 or caps.vocab < 2:
        return CheckResult("policy-dependence", True, 0.0, "skipped: needs L >= 2 and V >= 2")
    d, a, b = policy_dependence_pair()
    tv = induced_distribution(d, a).tv(induced_distribution(d, b))
    return CheckResult("policy-dependence", tv > TV_POLICY, tv,
                       f"TV between fixed orders = {tv:.3e} (needs > {TV_POLICY})")


def check_joint_sums(caps) -> CheckResult:
    """Joint over (x, trajectory) sums to one for the uniform and a rule policy."""
    worst = 0.0
    for L, V in _shapes(caps):
        _, d = toy_denoisers(L, V)[1]
        for policy in (UNIFORM, parse_rule("greedy:k=2")):
            total = math.fsum(math.exp(marginal_bruteforce(d, policy, x, cap=caps.length).loglik)
                              for x in _space(L, V))
            worst = max(worst, abs(total - 1.0))
    return CheckResult("joint-sums", worst <= NORM_TOL, worst, "uniform and greedy policies")


def check_uniform_orders(caps) -> CheckResult:
    L = min(3, caps.length)
    hist = masking_order_histogram(L, caps.trials, seed=11)
    target = 1.0 / math.factorial(L)
    se = math.sqrt(target * (1 - target) / caps.trials) if L > 1 else 0.0
    worst = max(abs(f - target) for f in hist.values())
    complete = len(hist) == math.factorial(L)
    ok = complete and worst <= 3 * se + 1e-15
    return CheckResult("uniform-orders", ok, worst,
                       f"L={L}, {caps.trials} trials, 3 SE = {3 * se:.2e}")


def check_elbo(caps) -> CheckResult:
    """ELBO is below the uniform-policy likelihood; the MC estimator is unbiased."""
    jensen, unbiased, strict = 0.0, 0.0, False
    for L, V in _shapes(caps):
        for _, d in toy_denoisers(L, V):
            for x in _space(L, V):
                elbo_nll = aoarm_elbo_exhaustive(d, x, cap=caps.length)
                ll = uniform_policy_exact_loglik(d, x, cap=caps.length)
                jensen = max(jensen, -elbo_nll - ll)
                strict |= -elbo_nll < ll - 1e-9
                unbiased = max(unbiased, abs(elbo_exhaustive_mc_mean(d, x) - elbo_nll))
    ok = jensen <= JENSEN_SLACK and unbiased <= ELBO_TOL and (strict or caps.length < 2)
    detail = f"max bound violation {jensen:.2e}, strict gap seen: {strict}"
    return CheckResult("elbo-bound", ok, max(unbiased, max(jensen, 0.0)), detail)


def run_verify(caps: VerifyCaps | None = None, extra_rules=()) -> VerifyReport:
    caps = caps or VerifyCaps.from_env()
    report = VerifyReport(caps)
    holder = {}

    def progress():
        result, holder["skip"] = check_progress(caps, extra_rules)
        return result

    report.checks.append(_timed("progress", progress))
    skip = holder.get("skip", set())
    report.checks.append(_timed("collapse", lambda: check_collapse(caps, extra_rules, skip)))
    report.checks.append(_timed("normalization",
                                lambda: check_normalization(caps, extra_rules, skip)))
    report.checks.append(_timed("sampling-consistency",
                                lambda: check_sampling(caps, extra_rules, skip)))
    report.checks.append(_timed("policy-dependence", lambda: check_policy_dependence(caps)))
    report.checks.append(_timed("joint-sums", lambda: check_joint_sums(caps)))
    report.checks.append(_timed("uniform-orders", lambda: check_uniform_orders(caps)))
    report.checks.append(_timed("elbo-bound", lambda: check_elbo(caps)))
    return report
