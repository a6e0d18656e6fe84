"""Perplexity, gap closed, sample metrics and corpus evaluation reports."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .denoiser import Denoiser, elbo_loss_mc
from .engine import aoarm_elbo_exhaustive, duel_exact_loglik
from .errors import EmptyCorpus, IllDefinedGap
from .oracle import oracle_block_search
from .rules import (BlockRestrict, ConfThreshold, GreedyConfidence, LeftToRight, ProbMargin,
                    Rule, rule_params)

METHODS = ("duel", "elbo-mc", "elbo-exhaustive", "arm-exact", "oracle")
CSV_COLUMNS = ("method", "rule", "k", "mu", "nu", "nfe_target", "nfe_realized",
               "nll", "ppl", "gap_closed")


def perplexity(total_nll: float, token_count: int) -> float:
    if token_count < 1:
        raise ValueError("token_count must be at least 1")
    return math.exp(total_nll / token_count)


def gap_closed(ppl_elbo: float, ppl_duel: float, ppl_arm: float) -> float:
    """Percentage of the ELBO-vs-ARM perplexity gap removed by exact evaluation."""
    d_elbo = ppl_elbo - ppl_arm
    if d_elbo <= 0:
        raise IllDefinedGap(
            f"ELBO perplexity {ppl_elbo} does not exceed ARM perplexity {ppl_arm}"
        )
    return 100.0 * (d_elbo - (ppl_duel - ppl_arm)) / d_elbo


@dataclass(frozen=True)
class GapReport:
    ppl_elbo: float
    ppl_duel: float
    ppl_arm: float

    @property
    def delta_elbo(self) -> float:
        return self.ppl_elbo - self.ppl_arm

    @property
    def delta_duel(self) -> float:
        return self.ppl_duel - self.ppl_arm

    @property
    def well_defined(self) -> bool:
        return self.delta_elbo > 0

    @property
    def gap_closed_pct(self) -> float | None:
        if not self.well_defined:
            return None
        return gap_closed(self.ppl_elbo, self.ppl_duel, self.ppl_arm)


# -- sample-based metrics ---------------------------------------------------------


def generative_perplexity(samples, reference: Denoiser) -> float:
    """Perplexity of samples under the reference's left-to-right chain rule."""
    samples = list(samples)
    if not samples:
        raise EmptyCorpus("no samples to score")
    l2r = LeftToRight(1)
    nll = math.fsum(-duel_exact_loglik(reference, l2r, s).loglik for s in samples)
    tokens = sum(len(s) for s in samples)
    return perplexity(nll, tokens)


def token_entropy(samples) -> float:
    """Shannon entropy (nats) of the unigram distribution of all sample tokens."""
    counts = Counter(int(t) for s in samples for t in s)
    n = sum(counts.values())
    if n == 0:
        raise EmptyCorpus("no tokens")
    return -math.fsum(c / n * math.log(c / n) for c in counts.values())


# -- corpus evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class SequenceRecord:
    index: int
    nll: float
    length: int
    nfe: float

    def to_json(self) -> dict:
        return {"index": self.index, "nll": _num(self.nll), "length": self.length,
                "nfe": self.nfe}


def _num(v):
    return float(v) if math.isfinite(v) else None


@dataclass
class EvaluationReport:
    method: str
    rule: str | None
    records: list[SequenceRecord]
    config: dict = field(default_factory=dict)
    nfe_target: float | None = None
    attachments: dict = field(default_factory=dict)

    @property
    def total_nll(self) -> float:
        return math.fsum(r.nll for r in self.records)

    @property
    def token_count(self) -> int:
        return sum(r.length for r in self.records)

    @property
    def nll_per_token(self) -> float:
        return self.total_nll / self.token_count

    @property
    def perplexity(self) -> float:
        return perplexity(self.total_nll, self.token_count)

    @property
    def mean_nfe(self) -> float:
        return math.fsum(r.nfe for r in self.records) / len(self.records)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "rule": self.rule,
            "config": self.config,
            "aggregate": {
                "total_nll": _num(self.total_nll),
                "token_count": self.token_count,
                "perplexity": _num(self.perplexity),
                "mean_nfe": self.mean_nfe,
                "nfe_target": self.nfe_target,
            },
            "records": [r.to_json() for r in self.records],
            "attachments": self.attachments,
            "entropy_estimator": "unigram",
        }

    def csv_row(self, rule: Rule | None = None, gap: float | None = None) -> dict:
        params = rule_params(rule) if rule is not None else {"k": None, "mu": None, "nu": None}
        return {
            "method": self.method,
            "rule": self.rule or "",
            **{k: "" if v is None else v for k, v in params.items()},
            "nfe_target": "" if self.nfe_target is None else self.nfe_target,
            "nfe_realized": repr(self.mean_nfe),
            "nll": repr(self.nll_per_token),
            "ppl": repr(self.perplexity),
            "gap_closed": "" if gap is None else repr(gap),
        }


def write_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _score_one(d, x, index, method, rule, mc_samples, block, seed):
    L = len(x)
    if method == "duel":
        rec = duel_exact_loglik(d, rule, x)
        return SequenceRecord(index, -rec.loglik, L, rec.nfe)
    if method == "arm-exact":
        rec = duel_exact_loglik(d, LeftToRight(1), x)
        return SequenceRecord(index, -rec.loglik, L, rec.nfe)
    if method == "elbo-mc":
        draws = [elbo_loss_mc(d, x, seed, index, j) for j in range(mc_samples)]
        return SequenceRecord(index, math.fsum(draws) / mc_samples, L, mc_samples)
    if method == "elbo-exhaustive":
        return SequenceRecord(index, aoarm_elbo_exhaustive(d, x), L,
                              L * math.factorial(L))
    if method == "oracle":
        res = oracle_block_search(d, x, block)
        return SequenceRecord(index, res.nll, L,
                              (L // block) * math.factorial(block) * block)
    raise ValueError(f"unknown method {method!r}")


def evaluate_corpus(d: Denoiser, corpus, method: str, rule: Rule | None = None,
                    mc_samples: int = 1, block: int | None = None, seed: int = 0,
                    parallel: int = 0, config: dict | None = None) -> EvaluationReport:
    """Score every sequence and aggregate; results are merged in corpus order."""
    corpus = [np.asarray(x, dtype=np.int64) for x in corpus]
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    if method == "duel" and rule is None:
        raise ValueError("method 'duel' needs a rule")
    if method == "elbo-mc" and mc_samples < 1:
        raise ValueError("elbo-mc needs at least one Monte Carlo sample")
    if method == "oracle" and block is None:
        raise ValueError("method 'oracle' needs a block size")

    def job(item):
        i, x = item
        return _score_one(d, x, i, method, rule, mc_samples, block, seed)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(job, enumerate(corpus)))
    else:
        records = [job(item) for item in enumerate(corpus)]
    rule_str = rule.spec if method == "duel" else ("l2r:k=1" if method == "arm-exact" else None)
    return EvaluationReport(method, rule_str, records, dict(config or {}, seed=seed))


# -- NFE sweeps ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    rule: Rule
    nfe_target: float | None
    nfe_realized: float
    perplexity: float
    report: EvaluationReport


FAMILIES = {
    "l2r": LeftToRight,
    "greedy": GreedyConfidence,
    "margin": ProbMargin,
    "thresh": ConfThreshold,
}


def make_family_rule(family: str, value, block: int | None = None) -> Rule:
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown rule family {family!r}") from None
    rule = cls(float(value)) if family == "thresh" else cls(int(value))
    return BlockRestrict(rule, block) if block else rule


def nfe_sweep(d: Denoiser, family: str, values, corpus, block: int | None = None,
              targets: dict | None = None, parallel: int = 0) -> list[SweepRow]:
    """One DUEL evaluation per parameter value.

    Fixed-k families get ``ceil(L / k)`` as their NFE target (per block when
    block-restricted); threshold rules take targets from ``targets`` if given.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    L = len(corpus[0])
    rows = []
    for value in values:
        rule = make_family_rule(family, value, block)
        if family == "thresh":
            target = None if targets is None else targets.get(value)
        elif block:
            target = (L // block) * math.ceil(block / int(value))
        else:
            target = math.ceil(L / int(value))
        report = evaluate_corpus(d, corpus, "duel", rule, parallel=parallel)
        report.nfe_target = target
        rows.append(SweepRow(rule, target, report.mean_nfe, report.perplexity, report))
    return rows
