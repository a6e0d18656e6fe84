"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
Reports are written with sorted keys and carry the resolved config and seed,
so reruns with the same arguments produce byte-identical files.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .denoiser import TrainableDenoiser, fit_tabular, load_denoiser, save_denoiser, train
from .engine import LENGTH_CAP, duel_sample
from .errors import (DuelError, EmptyCorpus, LengthMismatch, NonUniformLength,
                     RuleSyntaxError)
from .metrics import (FAMILIES, EvaluationReport, SequenceRecord, dump_json, evaluate_corpus,
                      gap_closed, generative_perplexity, nfe_sweep, token_entropy, write_csv)
from .oracle import oracle_block_search
from .rules import BlockRestrict, Rule, parse_rule
from .seq import Vocabulary
from .verify import VerifyCaps, run_verify

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- corpus ingestion ------------------------------------------------------------------


def read_lines(path) -> list[tuple[int, str]]:
    """Non-blank lines with their 1-based line numbers."""
    text = Path(path).read_text(encoding="utf-8")
    return [(i, line) for i, line in enumerate(text.splitlines(), 1) if line.strip()]


def check_uniform(lines: list[tuple[int, list]]) -> int:
    if not lines:
        raise EmptyCorpus("corpus has no sequences")
    expected = len(lines[0][1])
    for number, tokens in lines:
        if len(tokens) != expected:
            raise NonUniformLength(number, expected, len(tokens))
    return expected


def build_vocab(lines: list[tuple[int, str]], mode: str = "char") -> Vocabulary:
    probe = Vocabulary(("?",), mode)
    tokenized = [(n, probe.tokenize(line)) for n, line in lines]
    check_uniform(tokenized)
    return Vocabulary(tuple(sorted({t for _, toks in tokenized for t in toks})), mode)


def load_corpus(path, vocab: Vocabulary) -> list[np.ndarray]:
    lines = read_lines(path)
    check_uniform([(n, vocab.tokenize(line)) for n, line in lines])
    return [vocab.encode(line) for _, line in lines]


# -- argument resolution ----------------------------------------------------------------


def _values(text, cast):
    return [cast(v) for v in str(text).split(",") if v]


def resolve_rule(args) -> Rule | None:
    """Combine ``--rule`` with ``--k/--mu/--nu/--block`` into one rule."""
    given = {name: getattr(args, name) for name in ("k", "mu", "nu")
             if getattr(args, name, None) is not None}
    if args.rule is None:
        if given:
            raise UsageError(f"--{'/--'.join(given)} need --rule")
        return None
    if ":" in args.rule or args.rule.startswith("fixed"):
        if given:
            raise UsageError("give rule parameters inline or through flags, not both")
        rule = parse_rule(args.rule)
    else:
        family = args.rule
        allowed = {"l2r": {"k"}, "greedy": {"k"}, "margin": {"k"}, "thresh": {"mu"},
                   "klass": {"mu", "nu"}}.get(family)
        if allowed is None:
            raise UsageError(f"unknown rule family {family!r}")
        extra = set(given) - allowed
        if extra:
            raise UsageError(f"rule {family!r} does not take --{'/--'.join(sorted(extra))}")
        body = ",".join(f"{name}={given[name]}" for name in sorted(given))
        rule = parse_rule(f"{family}:{body}")
    if getattr(args, "block", None):
        rule = BlockRestrict(rule, args.block)
    return rule


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _config(args, *names) -> dict:
    """Resolved run configuration embedded in every report."""
    out = {"command": args.command, "version": __version__}
    for name in names:
        out[name] = getattr(args, name, None)
    return out


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_model(args, corpus=None):
    vocab = Vocabulary.load(args.vocab)
    model = load_denoiser(args.model)
    if model.n_tokens != vocab.size:
        raise LengthMismatch(f"model has V={model.n_tokens}, vocabulary has {vocab.size}")
    if corpus is not None:
        data = load_corpus(corpus, vocab)
        if len(data[0]) != model.length:
            raise LengthMismatch(f"corpus has L={len(data[0])}, model has L={model.length}")
        return vocab, model, data
    return vocab, model, None


# -- commands -----------------------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    vocab = build_vocab(read_lines(args.corpus), args.mode)
    _emit(args, json.dumps(vocab.to_json(), indent=2) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.out:
        raise UsageError("train needs --out for the model file")
    vocab = Vocabulary.load(args.vocab)
    corpus = load_corpus(args.corpus, vocab)
    if args.model_type == "tabular":
        model = fit_tabular(corpus, lam=args.lam, n_tokens=vocab.size)
    else:
        init = TrainableDenoiser(len(corpus[0]), vocab.size, hidden=args.hidden,
                                 embed=args.embed, lr=args.lr, seed=args.seed)
        model = train(init, corpus, args.steps, seed=args.seed)
    save_denoiser(model, args.out)
    return EXIT_OK


def _check_eval_combo(args):
    if args.method == "duel" and args.rule is None:
        raise UsageError("--method duel needs --rule")
    if args.method != "duel" and args.rule is not None:
        raise UsageError(f"--rule cannot be combined with --method {args.method}")
    if args.method != "elbo-mc" and args.mc_samples is not None:
        raise UsageError("--mc-samples only applies to --method elbo-mc")
    if args.method == "oracle" and args.block is None:
        raise UsageError("--method oracle needs --block")
    if args.method not in ("duel", "oracle") and args.block is not None:
        raise UsageError(f"--block cannot be combined with --method {args.method}")


def cmd_eval(args) -> int:
    _check_eval_combo(args)
    rule = resolve_rule(args)
    _, model, corpus = _load_model(args, args.corpus)
    if args.method == "elbo-exhaustive" and model.length > LENGTH_CAP:
        raise UsageError(f"elbo-exhaustive enumerates L! orders; L={model.length} is over"
                         f" the cap {LENGTH_CAP}, use elbo-mc")
    config = _config(args, "corpus", "vocab", "model", "method", "rule", "k", "mu", "nu",
                     "block", "mc_samples", "format")
    config["rule_resolved"] = rule.spec if rule else None
    report = evaluate_corpus(model, corpus, args.method, rule,
                             mc_samples=args.mc_samples or 1, block=args.block,
                             seed=args.seed, parallel=args.parallel, config=config)
    if args.format == "csv":
        _emit(args, write_csv([report.csv_row(rule)]))
    else:
        _emit(args, dump_json(report.to_json()))
    return EXIT_OK


def cmd_sample(args) -> int:
    rule = resolve_rule(args)
    if rule is None:
        raise UsageError("sample needs --rule")
    vocab, model, _ = _load_model(args)
    rows, samples = [], []
    for i in range(args.num):
        tokens, record = duel_sample(model, rule, args.seed, i)
        samples.append(tokens)
        rows.append({"index": i, "text": vocab.decode(tokens), **record.to_json()})
    out = {
        "config": dict(_config(args, "vocab", "model", "rule", "k", "mu", "nu", "block", "num",
                               "reference"), seed=args.seed, rule_resolved=rule.spec),
        "samples": rows,
        "token_entropy": token_entropy(samples),
        "entropy_estimator": "unigram",
        "mean_nfe": math.fsum(r["nfe"] for r in rows) / len(rows),
    }
    if args.reference:
        gen = generative_perplexity(samples, load_denoiser(args.reference))
        # a sample outside the reference's support has infinite perplexity
        out["generative_perplexity"] = gen if math.isfinite(gen) else None
    _emit(args, dump_json(out))
    return EXIT_OK


def cmd_oracle_search(args) -> int:
    _, model, corpus = _load_model(args, args.corpus)
    results = [oracle_block_search(model, x, args.block) for x in corpus]
    L = model.length
    nfe = (L // args.block) * math.factorial(args.block) * args.block
    records = [SequenceRecord(i, r.nll, L, nfe) for i, r in enumerate(results)]
    config = _config(args, "corpus", "vocab", "model", "block", "format")
    report = EvaluationReport("oracle", None, records, dict(config, seed=args.seed),
                              attachments={"oracle": [r.to_json() for r in results]})
    if args.format == "csv":
        _emit(args, write_csv([report.csv_row()]))
    else:
        _emit(args, dump_json(report.to_json()))
    return EXIT_OK


def cmd_compare_rules(args) -> int:
    family = args.rule
    if family not in FAMILIES:
        raise UsageError(f"compare-rules sweeps one of {sorted(FAMILIES)}, got {family!r}")
    if family == "thresh":
        if args.mu is None or args.k is not None:
            raise UsageError("thresh sweeps take --mu as a comma list")
        values = _values(args.mu, float)
    else:
        if args.mu is not None:
            raise UsageError(f"{family} sweeps take --k as a comma list")
        values = _values(args.k, int) if args.k is not None else None
    _, model, corpus = _load_model(args, args.corpus)
    L = model.length
    if values is None:
        values = sorted({1, 2, 4, L} & set(range(1, L + 1)))
    if args.block and family != "thresh":
        values = [v for v in values if v <= args.block]
    config = _config(args, "corpus", "vocab", "model", "rule", "k", "mu", "block",
                     "mc_samples", "format")
    arm = evaluate_corpus(model, corpus, "arm-exact", seed=args.seed, config=config)
    if L <= LENGTH_CAP and args.mc_samples is None:
        elbo = evaluate_corpus(model, corpus, "elbo-exhaustive", seed=args.seed, config=config)
    else:
        elbo = evaluate_corpus(model, corpus, "elbo-mc", mc_samples=args.mc_samples or 1,
                               seed=args.seed, config=config)
    sweep = nfe_sweep(model, family, values, corpus, block=args.block, parallel=args.parallel)
    csv_rows = [elbo.csv_row(), arm.csv_row()]
    json_rows = []
    for row in sweep:
        row.report.config = dict(config, seed=args.seed)
        try:
            gap = gap_closed(elbo.perplexity, row.perplexity, arm.perplexity)
        except DuelError:
            gap = None
        csv_rows.append(row.report.csv_row(row.rule, gap))
        json_rows.append({"report": row.report.to_json(), "gap_closed": gap,
                          "nfe_target": row.nfe_target, "nfe_realized": row.nfe_realized})
    if args.format == "csv":
        _emit(args, write_csv(csv_rows))
    else:
        _emit(args, dump_json({"config": dict(config, seed=args.seed),
                               "elbo": elbo.to_json(), "arm": arm.to_json(),
                               "sweep": json_rows}))
    return EXIT_OK


def cmd_verify(args) -> int:
    caps = VerifyCaps.from_env()
    report = run_verify(caps)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_VERIFY


# -- parser ------------------------------------------------------------------------------------


def _common(p, *, corpus=False, model=False, rule=False, fmt=False):
    if corpus:
        p.add_argument("--corpus", required=True, help="UTF-8 text, one sequence per line")
    if model:
        p.add_argument("--vocab", required=True)
        p.add_argument("--model", required=True)
    if rule:
        p.add_argument("--rule", help="rule spec such as greedy:k=2, or a family name")
        p.add_argument("--k", type=_positive_int)
        p.add_argument("--mu", type=float)
        p.add_argument("--nu", type=float)
        p.add_argument("--block", type=_positive_int, help="block size L' for semi-AR rules")
    if fmt:
        p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (stdout if omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="duel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a sorted vocabulary from a corpus")
    _common(p, corpus=True)
    p.add_argument("--mode", choices=("char", "whitespace"), default="char")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="fit a tabular model or train the MLP denoiser")
    _common(p, corpus=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--model-type", choices=("tabular", "mlp"), default="tabular")
    p.add_argument("--lam", type=float, default=0.0, help="tabular additive smoothing")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--hidden", type=_positive_int, default=16)
    p.add_argument("--embed", type=_positive_int, default=8)
    p.add_argument("--lr", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a corpus and write a report")
    _common(p, corpus=True, model=True, rule=True, fmt=True)
    p.add_argument("--method", required=True,
                   choices=("duel", "elbo-mc", "elbo-exhaustive", "arm-exact", "oracle"))
    p.add_argument("--mc-samples", type=_positive_int, help="Monte Carlo samples K")
    p.add_argument("--parallel", type=int, default=0, help="worker threads (0 = serial)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw sequences with a denoiser and rule")
    _common(p, model=True, rule=True)
    p.add_argument("--num", type=_positive_int, default=10)
    p.add_argument("--reference", help="model for generative perplexity")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oracle-search", help="best intra-block order per sequence")
    _common(p, corpus=True, model=True, fmt=True)
    p.add_argument("--block", type=_positive_int, required=True)
    p.set_defaults(func=cmd_oracle_search)

    p = sub.add_parser("compare-rules", help="NFE sweep of one rule family")
    _common(p, corpus=True, model=True, rule=True, fmt=True)
    p.add_argument("--mc-samples", type=_positive_int)
    p.add_argument("--parallel", type=int, default=0)
    p.set_defaults(func=cmd_compare_rules)
    # sweeps take comma lists, so --k and --mu are plain strings here
    for action in p._actions:
        if action.dest in ("k", "mu"):
            action.type = str

    p = sub.add_parser("verify", help="run the brute-force property suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, RuleSyntaxError) as exc:
        print(f"duel {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DuelError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"duel {args.command}: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
