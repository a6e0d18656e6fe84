"""Sequences, vocabularies, ordered partitions and token probability matrices.

Positions are 0-based everywhere inside the package. Reports, CLI rule
strings and JSON dumps use 1-based positions; :func:`to_one_based` and
:func:`from_one_based` are the only places that convert.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidPartition, InvalidToken, RevealUnmasked

MASK_STR = "<mask>"
ROW_TOL = 1e-9


def to_one_based(positions: Iterable[int]) -> list[int]:
    return [int(p) + 1 for p in sorted(positions)]


def from_one_based(positions: Iterable[int]) -> list[int]:
    return [int(p) - 1 for p in positions]


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple[str, ...]
    mode: str = "char"

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if not self.symbols:
            raise ValueError("vocabulary needs at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be distinct")
        if self.mode not in ("char", "whitespace"):
            raise ValueError(f"unknown tokenization mode {self.mode!r}")
        object.__setattr__(
            self, "_index", {s: i for i, s in enumerate(self.symbols)}
        )

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def mask_id(self) -> int:
        return len(self.symbols)

    def tokenize(self, line: str) -> list[str]:
        return list(line) if self.mode == "char" else line.split()

    def encode(self, line: str) -> np.ndarray:
        try:
            return np.array([self._index[s] for s in self.tokenize(line)], dtype=np.int64)
        except KeyError as exc:
            raise InvalidToken(f"symbol {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        parts = [MASK_STR if i == self.mask_id else self.symbols[i] for i in ids]
        return ("" if self.mode == "char" else " ").join(parts)

    def to_json(self) -> dict:
        return {"symbols": list(self.symbols), "mode": self.mode}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(tuple(obj["symbols"]), obj.get("mode", "char"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def check_clean(x: np.ndarray, n_tokens: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidToken("a clean sequence is a non-empty 1-D array of token ids")
    if np.any(x < 0) or np.any(x >= n_tokens):
        raise InvalidToken(f"token ids must lie in [0, {n_tokens - 1}]")
    return x


def all_masked(length: int, mask_id: int) -> np.ndarray:
    return np.full(length, mask_id, dtype=np.int64)


def masked_positions(z: np.ndarray, mask_id: int) -> frozenset[int]:
    return frozenset(int(i) for i in np.flatnonzero(np.asarray(z) == mask_id))


def reveal(z: np.ndarray, pos: int, token: int, mask_id: int) -> np.ndarray:
    """Return a copy of ``z`` with ``token`` written at masked position ``pos``."""
    if token == mask_id or not 0 <= token < mask_id:
        raise InvalidToken(f"token {token} is not in [0, {mask_id - 1}]")
    if z[pos] != mask_id:
        raise RevealUnmasked(f"position {pos + 1} is already revealed")
    out = np.array(z, dtype=np.int64, copy=True)
    out[pos] = token
    return out


def render(z: np.ndarray, vocab: Vocabulary) -> str:
    return vocab.decode(z)


# -- ordered partitions ----------------------------------------------------------


@dataclass(frozen=True)
class PartitionVerdict:
    valid: bool
    reason: str | None = None

    def __bool__(self):
        return self.valid


def validate_partition(parts: Sequence[Iterable[int]], length: int) -> PartitionVerdict:
    seen: set[int] = set()
    for t, part in enumerate(parts):
        part = set(part)
        if not part:
            return PartitionVerdict(False, f"emptiness: part {t + 1} is empty")
        overlap = seen & part
        if overlap:
            return PartitionVerdict(
                False, f"overlap: position(s) {to_one_based(overlap)} appear twice"
            )
        seen |= part
    universe = set(range(length))
    if seen != universe:
        missing = universe - seen
        extra = seen - universe
        return PartitionVerdict(
            False,
            f"coverage: missing {to_one_based(missing)}, out of range {to_one_based(extra)}",
        )
    return PartitionVerdict(True)


@dataclass(frozen=True)
class OrderedPartition:
    parts: tuple[frozenset[int], ...]
    length: int

    def __post_init__(self):
        parts = tuple(frozenset(int(p) for p in part) for part in self.parts)
        object.__setattr__(self, "parts", parts)
        verdict = validate_partition(parts, self.length)
        if not verdict:
            raise InvalidPartition(verdict.reason)

    @classmethod
    def trusted(cls, parts: tuple[frozenset[int], ...], length: int) -> "OrderedPartition":
        """Skip validation; for partitions built by a trajectory loop."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "parts", parts)
        object.__setattr__(obj, "length", length)
        return obj

    @property
    def steps(self) -> int:
        return len(self.parts)

    @property
    def is_sequential(self) -> bool:
        return all(len(p) == 1 for p in self.parts)

    def to_one_based(self) -> list[list[int]]:
        return [to_one_based(p) for p in self.parts]


# -- token probability matrix ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProbMatrix:
    """Row-stochastic L x V matrix stored as log-probabilities.

    Rows of revealed positions are one-hot on the observed token. The mask
    token has no column, so its probability is identically zero.
    """

    log_probs: np.ndarray
    masked: np.ndarray
    support_miss: bool = False
    key: bytes = b""
    _top: list = field(default_factory=list, repr=False)

    @classmethod
    def from_masked_rows(cls, z, masked_log_probs, mask_id, support_miss=False):
        """Build from log-probs, overwriting revealed rows with one-hot rows."""
        z = np.asarray(z, dtype=np.int64)
        logp = np.array(masked_log_probs, dtype=np.float64, copy=True)
        masked = z == mask_id
        revealed = np.flatnonzero(~masked)
        logp[revealed] = -np.inf
        logp[revealed, z[revealed]] = 0.0
        logp.setflags(write=False)
        masked.setflags(write=False)
        return cls(logp, masked, bool(support_miss), z.tobytes())

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def shape(self):
        return self.log_probs.shape

    def top_two(self) -> tuple[np.ndarray, np.ndarray]:
        """Highest and second-highest probability per row."""
        if not self._top:
            p = self.probs
            if p.shape[1] == 1:
                top = (p[:, 0].copy(), np.zeros(p.shape[0]))
            else:
                part = -np.partition(-p, 1, axis=1)
                top = (part[:, 0].copy(), part[:, 1].copy())
            self._top.append(top)
        return self._top[0]

    def row_errors(self) -> np.ndarray:
        return np.abs(self.probs.sum(axis=1) - 1.0)

    def is_valid(self, tol: float = ROW_TOL) -> bool:
        p = self.probs
        return bool(np.all(p >= 0) and np.all(self.row_errors() <= tol))
