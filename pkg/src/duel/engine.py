"""Sampling and exact likelihood for a denoiser paired with an unmasking rule.

Sampling and likelihood share one trajectory loop. The only difference is
whether the token written at a selected position is drawn from the
denoiser's row or read from the target sequence. Because the rule is
deterministic, the target fixes the whole trajectory, so the accumulated
log-probability is the exact log-likelihood of the induced distribution.
For adaptive rules the trajectory can differ between sequences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .denoiser import Denoiser
from .errors import EnumerationCap, LengthMismatch
from .rng import make_rng, step_uniforms
from .rules import INITIAL_STATE, Rule, select
from .seq import OrderedPartition, all_masked, check_clean, to_one_based

LENGTH_CAP = 6


@dataclass
class TrajectoryRecord:
    partition: OrderedPartition
    steps: list[list[tuple[int, float]]]
    nfe: int
    loglik: float
    support_miss: bool = False
    tokens: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "partition": self.partition.to_one_based(),
            "logprobs": [
                [[pos + 1, _finite_or_none(lp)] for pos, lp in step] for step in self.steps
            ],
            "nfe": self.nfe,
            "loglik": _finite_or_none(self.loglik),
            "support_miss": self.support_miss,
        }


def _finite_or_none(v):
    return float(v) if math.isfinite(v) else None


def _run(d: Denoiser, rule: Rule, pick, memo: dict | None = None) -> TrajectoryRecord:
    """Shared trajectory loop.

    ``memo`` caches the rule's choice per ``(z, state)``; since both the
    denoiser and the rule are deterministic, repeated trajectories over a
    batch can reuse it.
    """
    mask_id = d.mask_id
    z = all_masked(d.length, mask_id)
    state = INITIAL_STATE
    parts, steps = [], []
    loglik = 0.0
    miss = False
    t = 0
    remaining = d.length
    while remaining:
        key = (z.tobytes(), state.key()) if memo is not None else None
        hit = memo.get(key) if memo is not None else None
        if hit is None:
            P = d.evaluate(z)
            chosen, next_state = select(rule, z, P, state)
            hit = (P, chosen, sorted(chosen), next_state)
            if memo is not None:
                memo[key] = hit
        P, chosen, positions, state = hit
        tokens = pick(t, positions, P)
        step = []
        for pos, tok in zip(positions, tokens):
            lp = float(P.log_probs[pos, tok])
            step.append((pos, lp))
            loglik += lp
            z[pos] = tok
        miss = miss or P.support_miss
        parts.append(chosen)
        steps.append(step)
        remaining -= len(positions)
        t += 1
    miss = miss or loglik == -math.inf
    return TrajectoryRecord(OrderedPartition.trusted(tuple(parts), d.length), steps, t, loglik,
                            miss, z)


def duel_exact_loglik(d: Denoiser, rule: Rule, x) -> TrajectoryRecord:
    """Exact ``log p(x)`` under the distribution the sampler induces."""
    x = check_clean(x, d.n_tokens)
    if len(x) != d.length:
        raise LengthMismatch(f"sequence length {len(x)} != denoiser length {d.length}")
    return _run(d, rule, lambda t, positions, P: [int(x[pos]) for pos in positions])


def sample_token(probs_row: np.ndarray, u: float) -> int:
    """Inverse-CDF draw over a probability row in token-id order."""
    return _from_cdf(np.cumsum(probs_row), probs_row, u)


def _from_cdf(cdf, probs_row, u) -> int:
    tok = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if tok >= len(cdf):
        tok = int(np.flatnonzero(probs_row > 0)[-1])
    return tok


def _sampler(d: Denoiser, rule: Rule, seed: int, index: int, memo: dict | None,
             cdfs: dict) -> TrajectoryRecord:
    u = step_uniforms(seed, index, d.length)

    def pick(t, positions, P):
        rows = cdfs.get(P.key)
        if rows is None:
            probs = P.probs
            rows = cdfs[P.key] = (probs, np.cumsum(probs, axis=1))
        probs, cdf = rows
        return [_from_cdf(cdf[pos], probs[pos], u[t, j]) for j, pos in enumerate(positions)]

    return _run(d, rule, pick, memo)


def duel_sample(d: Denoiser, rule: Rule, seed: int, index: int = 0, length: int | None = None):
    """Draw one sequence; the draws at step ``t`` depend only on ``(seed, index, t)``.

    Tokens within a step are drawn independently, one uniform per selected
    position in position order. Returns ``(tokens, record)``; the record's
    log-likelihood is that of the sampled sequence.
    """
    if length is not None and length != d.length:
        raise LengthMismatch(f"requested length {length} != denoiser length {d.length}")
    record = _sampler(d, rule, seed, index, None, {})
    return record.tokens.copy(), record


def duel_sample_many(d: Denoiser, rule: Rule, n: int, seed: int, start: int = 0):
    """Draw sequences ``start .. start+n-1``; identical to repeated :func:`duel_sample`."""
    memo: dict = {}
    cdfs: dict = {}
    out = np.empty((n, d.length), dtype=np.int64)
    for i in range(n):
        out[i] = _sampler(d, rule, seed, start + i, memo, cdfs).tokens
    return out


# -- uniform-order quantities ------------------------------------------------------


def _check_cap(length, cap):
    if length > cap:
        raise EnumerationCap(f"L={length} exceeds the enumeration cap {cap}")


def path_loglik(d: Denoiser, x, order) -> float:
    """Sequential log-likelihood of ``x`` revealing positions in ``order``."""
    mask_id = d.mask_id
    z = all_masked(d.length, mask_id)
    total = 0.0
    for pos in order:
        total += float(d.evaluate(z).log_probs[pos, x[pos]])
        z[pos] = x[pos]
    return total


def permutation_logliks(d: Denoiser, x, cap: int = LENGTH_CAP) -> np.ndarray:
    x = check_clean(x, d.n_tokens)
    _check_cap(d.length, cap)
    return np.array([path_loglik(d, x, order) for order in permutations(range(d.length))])


def aoarm_elbo_exhaustive(d: Denoiser, x, cap: int = LENGTH_CAP) -> float:
    """Average over all L! orders of the sequential NLL (the ELBO, as an NLL)."""
    lls = permutation_logliks(d, x, cap)
    return -math.fsum(lls) / len(lls)


def uniform_policy_exact_loglik(d: Denoiser, x, cap: int = LENGTH_CAP) -> float:
    """``log p(x)`` under uniformly random sequential unmasking."""
    lls = permutation_logliks(d, x, cap)
    top = lls.max()
    if top == -math.inf:
        return -math.inf
    return float(top + math.log(np.exp(lls - top).sum()) - math.lgamma(len(x) + 1))


def forward_mask(x, n: int, seed: int, mask_id: int) -> np.ndarray:
    """Mask a uniformly random size-``n`` subset of positions of ``x``."""
    x = np.asarray(x, dtype=np.int64)
    if not 0 <= n <= len(x):
        raise ValueError(f"n must lie in [0, {len(x)}]")
    z = x.copy()
    z[make_rng(seed).choice(len(x), size=n, replace=False)] = mask_id
    return z


def describe(record: TrajectoryRecord) -> str:
    parts = " ".join("{" + ",".join(map(str, to_one_based(p))) + "}" for p in record.partition.parts)
    return f"{parts}  nfe={record.nfe}  loglik={record.loglik:.6f}"
