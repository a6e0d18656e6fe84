"""Deterministic unmasking rules.

A rule looks at the masked positions of the current state and the denoiser's
probability matrix and returns the non-empty set of positions to reveal next.
KLASS additionally reads the previous step's matrix, which is threaded through
the trajectory as :class:`RuleState` rather than stored on the rule.

Rule strings (1-based positions)::

    l2r:k=1  greedy:k=4  margin:k=2  thresh:mu=0.7  klass:mu=0.9,nu=0.01
    block:4:greedy:k=1  fixed:3,1,2,4
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BlockMismatch, EmptySelection, NoMaskedPositions, RuleSyntaxError
from .seq import ProbMatrix, from_one_based, to_one_based


@dataclass(frozen=True)
class RuleState:
    previous: ProbMatrix | None = None
    block_cursor: int = 0

    def key(self):
        return (None if self.previous is None else self.previous.key, self.block_cursor)


INITIAL_STATE = RuleState()


def _top_k(candidates, scores, k):
    ranked = sorted(candidates, key=lambda pos: (-scores[pos], pos))
    return frozenset(ranked[:k])


def _most_confident(candidates, P):
    return _top_k(candidates, P.top_two()[0], 1)


class Rule:
    """Base class. ``choose`` receives the sorted candidate positions."""

    def choose(self, candidates: list[int], P: ProbMatrix, state: RuleState):
        raise NotImplementedError

    @property
    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec


def _check_k(k):
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")


@dataclass(frozen=True)
class LeftToRight(Rule):
    k: int = 1

    def __post_init__(self):
        _check_k(self.k)

    def choose(self, candidates, P, state):
        return frozenset(candidates[: self.k]), state

    @property
    def spec(self):
        return f"l2r:k={self.k}"


@dataclass(frozen=True)
class GreedyConfidence(Rule):
    k: int = 1

    def __post_init__(self):
        _check_k(self.k)

    def choose(self, candidates, P, state):
        return _top_k(candidates, P.top_two()[0], self.k), state

    @property
    def spec(self):
        return f"greedy:k={self.k}"


@dataclass(frozen=True)
class ProbMargin(Rule):
    k: int = 1

    def __post_init__(self):
        _check_k(self.k)

    def choose(self, candidates, P, state):
        p1, p2 = P.top_two()
        return _top_k(candidates, p1 - p2, self.k), state

    @property
    def spec(self):
        return f"margin:k={self.k}"


def _check_mu(mu):
    if not 0 < mu <= 1:
        raise ValueError(f"mu must lie in (0, 1], got {mu}")


@dataclass(frozen=True)
class ConfThreshold(Rule):
    mu: float

    def __post_init__(self):
        _check_mu(self.mu)

    def choose(self, candidates, P, state):
        p1 = P.top_two()[0]
        chosen = frozenset(pos for pos in candidates if p1[pos] >= self.mu)
        return chosen or _most_confident(candidates, P), state

    @property
    def spec(self):
        return f"thresh:mu={self.mu!r}"


def kl_rows(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Row-wise KL(prev || cur) from log-probabilities; 0 log 0 = 0."""
    p = np.exp(prev)
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0, p * (prev - cur), 0.0)
    return terms.sum(axis=-1)


@dataclass(frozen=True)
class Klass(Rule):
    mu: float
    nu: float

    def __post_init__(self):
        _check_mu(self.mu)
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")

    def choose(self, candidates, P, state):
        new_state = replace(state, previous=P)
        if state.previous is None:
            return _most_confident(candidates, P), new_state
        p1 = P.top_two()[0]
        idx = np.asarray(candidates)
        kl = kl_rows(state.previous.log_probs[idx], P.log_probs[idx])
        chosen = frozenset(
            pos for pos, d in zip(candidates, kl) if p1[pos] >= self.mu and d <= self.nu
        )
        return chosen or _most_confident(candidates, P), new_state

    @property
    def spec(self):
        return f"klass:mu={self.mu!r},nu={self.nu!r}"


@dataclass(frozen=True)
class FixedOrder(Rule):
    """Reveal positions in a fixed order (0-based), ``k`` at a time."""

    order: tuple[int, ...]
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(p) for p in self.order))
        _check_k(self.k)
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError("fixed order must be a permutation of all positions")
        object.__setattr__(self, "_rank", {p: i for i, p in enumerate(self.order)})

    def choose(self, candidates, P, state):
        if len(self.order) != P.shape[0]:
            raise ValueError(f"fixed order covers {len(self.order)} positions, state has {P.shape[0]}")
        ranked = sorted(candidates, key=self._rank.__getitem__)
        return frozenset(ranked[: self.k]), state

    @property
    def spec(self):
        body = ",".join(str(p) for p in to_one_based_order(self.order))
        return f"fixed:{body}" + (f";k={self.k}" if self.k != 1 else "")


def to_one_based_order(order):
    return [p + 1 for p in order]


@dataclass(frozen=True)
class BlockRestrict(Rule):
    """Apply ``inner`` only inside the leftmost block that still has masks."""

    inner: Rule
    block: int

    def __post_init__(self):
        if self.block < 1:
            raise ValueError("block size must be positive")

    def choose(self, candidates, P, state):
        length = P.shape[0]
        if length % self.block:
            raise BlockMismatch(f"block size {self.block} does not divide L={length}")
        cursor = candidates[0] // self.block
        in_block = [pos for pos in candidates if pos // self.block == cursor]
        chosen, new_state = self.inner.choose(in_block, P, state)
        return chosen, replace(new_state, block_cursor=cursor)

    @property
    def spec(self):
        return f"block:{self.block}:{self.inner.spec}"


# -- selection ---------------------------------------------------------------------


def select(rule: Rule, z, P: ProbMatrix, state: RuleState = INITIAL_STATE):
    """Positions to reveal at state ``z`` and the updated rule state."""
    masked = np.flatnonzero(np.asarray(z) == P.shape[1]).tolist()
    if not masked:
        raise NoMaskedPositions("every position is already revealed")
    chosen, new_state = rule.choose(masked, P, state)
    if not chosen:
        raise EmptySelection(f"rule {rule} selected no positions")
    if not chosen <= set(masked):
        bad = to_one_based(chosen - set(masked))
        raise EmptySelection(f"rule {rule} selected unmasked position(s) {bad}")
    return chosen, new_state


def induced_policy_probability(rule: Rule, part, z, P: ProbMatrix,
                               state: RuleState = INITIAL_STATE) -> int:
    """Probability (0 or 1) that the rule's policy reveals exactly ``part``."""
    part = frozenset(part)
    if not part:
        return 0
    chosen, _ = select(rule, z, P, state)
    return int(chosen == part)


# -- rule strings ----------------------------------------------------------------------


def _kv(body: str, allowed: set[str]) -> dict[str, str]:
    out = {}
    for item in filter(None, body.split(",")):
        if "=" not in item:
            raise RuleSyntaxError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key not in allowed:
            raise RuleSyntaxError(f"unknown parameter {key!r}")
        out[key] = value
    return out


def parse_rule(text: str) -> Rule:
    text = text.strip()
    name, _, body = text.partition(":")
    try:
        if name == "block":
            size, _, inner = body.partition(":")
            return BlockRestrict(parse_rule(inner), int(size))
        if name == "fixed":
            order_part, _, opts = body.partition(";")
            k = int(_kv(opts, {"k"}).get("k", 1))
            order = from_one_based(int(p) for p in order_part.split(","))
            return FixedOrder(tuple(order), k)
        if name in ("l2r", "greedy", "margin"):
            k = int(_kv(body, {"k"}).get("k", 1))
            cls = {"l2r": LeftToRight, "greedy": GreedyConfidence, "margin": ProbMargin}[name]
            return cls(k)
        if name == "thresh":
            params = _kv(body, {"mu"})
            return ConfThreshold(float(params["mu"]))
        if name == "klass":
            params = _kv(body, {"mu", "nu"})
            return Klass(float(params["mu"]), float(params["nu"]))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, RuleSyntaxError):
            raise
        raise RuleSyntaxError(f"bad rule {text!r}: {exc}") from None
    raise RuleSyntaxError(f"unknown rule {text!r}")


def rule_params(rule: Rule) -> dict:
    """Flat k/mu/nu view used by CSV reports."""
    inner = rule.inner if isinstance(rule, BlockRestrict) else rule
    return {
        "k": getattr(inner, "k", None),
        "mu": getattr(inner, "mu", None),
        "nu": getattr(inner, "nu", None),
    }
