"""Brute-force oracles.

Everything here enumerates: ordered partitions, whole sequence spaces,
permutations inside a block. Sizes are capped because the counts grow
super-exponentially (ordered Bell numbers for partitions).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations, permutations, product

import numpy as np

from .denoiser import Denoiser
from .engine import duel_exact_loglik
from .errors import BlockMismatch, EnumerationCap
from .rng import make_rng
from .rules import INITIAL_STATE, Rule, select
from .seq import OrderedPartition, all_masked, check_clean

LENGTH_CAP = 6
TABLE_CAP = 4096
BLOCK_CAP = 5
HISTOGRAM_CAP = 5

UNIFORM = "uniform-sequential"


def ordered_bell(n: int) -> int:
    """Number of ordered set partitions of an n-set, a(n) = sum C(n,k) a(n-k)."""
    a = [1]
    for m in range(1, n + 1):
        a.append(sum(math.comb(m, k) * a[m - k] for k in range(1, m + 1)))
    return a[n]


def _partitions(remaining: tuple[int, ...]):
    if not remaining:
        yield ()
        return
    for size in range(1, len(remaining) + 1):
        for first in combinations(remaining, size):
            rest = tuple(p for p in remaining if p not in first)
            for tail in _partitions(rest):
                yield (frozenset(first),) + tail


@lru_cache(maxsize=None)
def _cached_partitions(length: int) -> tuple[OrderedPartition, ...]:
    return tuple(OrderedPartition(parts, length) for parts in _partitions(tuple(range(length))))


def enumerate_ordered_partitions(length: int, cap: int = LENGTH_CAP) -> list[OrderedPartition]:
    if length > cap:
        raise EnumerationCap(f"L={length} exceeds the partition enumeration cap {cap}")
    return list(_cached_partitions(length))


@dataclass(frozen=True)
class BruteForceResult:
    loglik: float
    nonzero_terms: int
    consistent_partitions: int
    n_terms: int
    argmax: OrderedPartition | None = None


def marginal_bruteforce(d: Denoiser, policy, x, cap: int = LENGTH_CAP) -> BruteForceResult:
    """``log sum_sigma p(x, sigma)`` over every ordered partition of [L].

    ``policy`` is a deterministic :class:`Rule` or :data:`UNIFORM` (uniform
    choice of one masked position per step). Partitions are walked depth
    first in :func:`enumerate_ordered_partitions` order, sharing the
    denoiser call and policy choice of each common prefix. Every partition
    still gets its own term; the rule is not consulted again below a step
    whose policy probability is already zero.
    """
    x = check_clean(x, d.n_tokens)
    if isinstance(policy, str) and policy != UNIFORM:
        raise ValueError(f"unknown policy {policy!r}")
    L = d.length
    if L > cap:
        raise EnumerationCap(f"L={L} exceeds the partition enumeration cap {cap}")
    uniform = isinstance(policy, str)
    rows = np.arange(L)
    log_terms: list[float] = []
    best: list = []
    consistent = 0

    def visit(z, state, remaining, log_pi, log_p, prefix):
        nonlocal consistent
        if not remaining:
            term = log_pi + log_p
            consistent += log_pi > -math.inf
            if not best or term > best[0]:
                best[:] = [term, prefix]
            log_terms.append(term)
            return
        P = d.evaluate(z)
        token_lp = P.log_probs[rows, x].tolist()
        chosen = next_state = None
        if not uniform and log_pi > -math.inf:
            chosen, next_state = select(policy, z, P, state)
        for size in range(1, len(remaining) + 1):
            for first in combinations(remaining, size):
                part = frozenset(first)
                if uniform:
                    step = -math.log(len(remaining)) if size == 1 else -math.inf
                else:
                    step = 0.0 if chosen == part else -math.inf
                child = z.copy()
                child[list(first)] = x[list(first)]
                rest = tuple(p for p in remaining if p not in part)
                visit(child, next_state, rest, log_pi + step,
                      log_p + sum(token_lp[p] for p in first), prefix + (part,))

    visit(all_masked(L, d.mask_id), INITIAL_STATE, tuple(range(L)), 0.0, 0.0, ())
    terms = np.array(log_terms)
    top = terms.max()
    if top == -math.inf:
        loglik = -math.inf
    else:
        loglik = float(top + math.log(np.exp(terms - top).sum()))
    nonzero = int(np.sum(terms > -math.inf))
    argmax = OrderedPartition(best[1], L) if top > -math.inf else None
    return BruteForceResult(loglik, nonzero, consistent, len(terms), argmax)


# -- induced distributions -----------------------------------------------------------


@dataclass
class DistributionTable:
    entries: dict[tuple[int, ...], float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return math.fsum(self.entries.values())

    def prob(self, x) -> float:
        return self.entries.get(tuple(int(t) for t in x), 0.0)

    def tv(self, other: "DistributionTable") -> float:
        keys = set(self.entries) | set(other.entries)
        return 0.5 * math.fsum(abs(self.prob(k) - other.prob(k)) for k in keys)


def all_sequences(length: int, n_tokens: int):
    return product(range(n_tokens), repeat=length)


def induced_distribution(d: Denoiser, rule: Rule, length: int | None = None,
                         cap: int = TABLE_CAP) -> DistributionTable:
    length = d.length if length is None else length
    if length != d.length:
        raise ValueError(f"length {length} != denoiser length {d.length}")
    if d.n_tokens ** length > cap:
        raise EnumerationCap(f"V^L={d.n_tokens ** length} exceeds the table cap {cap}")
    table = DistributionTable()
    for x in all_sequences(length, d.n_tokens):
        table.entries[x] = math.exp(duel_exact_loglik(d, rule, np.array(x)).loglik)
    return table


def empirical_distribution(samples) -> DistributionTable:
    counts = Counter(tuple(int(t) for t in s) for s in samples)
    n = sum(counts.values())
    return DistributionTable({k: c / n for k, c in counts.items()})


# -- uniform masking orders --------------------------------------------------------------


def masking_order_histogram(length: int, num_trials: int, seed: int,
                            cap: int = HISTOGRAM_CAP) -> dict[tuple[int, ...], float]:
    """Frequencies of unmasking orders produced by one-at-a-time uniform masking.

    Each trial masks one uniformly chosen unmasked position per step; the
    unmasking order is the reverse of the masking order.
    """
    if length > cap:
        raise EnumerationCap(f"L={length} exceeds the histogram cap {cap}")
    if num_trials == 0:
        return {}
    rng = make_rng(seed)
    rows = np.arange(num_trials)
    live = np.tile(np.arange(length), (num_trials, 1))
    masking = np.empty((num_trials, length), dtype=np.int64)
    for t in range(length):
        alive = length - t
        pick = rng.integers(0, alive, size=num_trials)
        masking[:, t] = live[rows, pick]
        live[rows, pick] = live[:, alive - 1]
    unmasking = masking[:, ::-1]
    orders, counts = np.unique(unmasking, axis=0, return_counts=True)
    return {tuple(int(p) for p in o): c / num_trials for o, c in zip(orders, counts)}


# -- oracle block search --------------------------------------------------------------------


@dataclass(frozen=True)
class BlockResult:
    index: int
    best_perm: tuple[int, ...]
    nll: float


@dataclass(frozen=True)
class OracleResult:
    nll: float
    blocks: tuple[BlockResult, ...]

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(p for b in self.blocks for p in b.best_perm)

    def to_json(self) -> dict:
        return {
            "nll": self.nll,
            "blocks": [
                {"index": b.index + 1, "best_perm": [p + 1 for p in b.best_perm], "nll": b.nll}
                for b in self.blocks
            ],
        }


def _block_terms(d: Denoiser, x, block_index: int, block: int, order) -> list[float]:
    z = all_masked(d.length, d.mask_id)
    start = block_index * block
    z[:start] = x[:start]
    terms = []
    for pos in order:
        terms.append(-float(d.evaluate(z).log_probs[pos, x[pos]]))
        z[pos] = x[pos]
    return terms


def _running_sum(terms) -> float:
    # same left-to-right accumulation as the trajectory loop, so totals match it bitwise
    total = 0.0
    for t in terms:
        total += t
    return total


def block_nll(d: Denoiser, x, block_index: int, block: int, order) -> float:
    """NLL of one block revealed in ``order``; earlier blocks revealed, later masked."""
    return _running_sum(_block_terms(d, x, block_index, block, order))


def oracle_block_search(d: Denoiser, x, block: int, cap: int = BLOCK_CAP) -> OracleResult:
    """Best intra-block order per block.

    The total is accumulated token by token in the winning order, so it equals
    the negated DUEL log-likelihood of that fixed order exactly.
    """
    x = check_clean(x, d.n_tokens)
    if block < 1 or d.length % block:
        raise BlockMismatch(f"block size {block} does not divide L={d.length}")
    if block > cap:
        raise EnumerationCap(f"block size {block} exceeds the oracle cap {cap}")
    results, terms = [], []
    for b in range(d.length // block):
        positions = range(b * block, (b + 1) * block)
        best = None
        for perm in permutations(positions):
            block_terms = _block_terms(d, x, b, block, perm)
            nll = _running_sum(block_terms)
            if best is None or nll < best[1]:
                best = (perm, nll, block_terms)
        results.append(BlockResult(b, tuple(best[0]), best[1]))
        terms += best[2]
    return OracleResult(_running_sum(terms), tuple(results))
