"""Denoisers: maps from a masked sequence to a token probability matrix.

Two concrete denoisers are provided. :class:`TabularBayesDenoiser` returns the
exact conditionals of a (smoothed) empirical joint, which makes every
likelihood identity checkable in closed form. :class:`TrainableDenoiser` is a
one-hidden-layer network trained on the masked-token ELBO.
"""
from __future__ import annotations

import base64
import json
import math
from itertools import combinations
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EmptyCorpus, InvalidToken, LengthMismatch
from .rng import make_rng, uniforms
from .seq import ProbMatrix, check_clean

CACHE_LIMIT = 200_000


class Denoiser:
    """Deterministic denoiser with a memo of evaluated states.

    Subclasses implement ``_evaluate``; instances are treated as immutable so
    the memo never goes stale.
    """

    length: int
    n_tokens: int

    @property
    def mask_id(self) -> int:
        return self.n_tokens

    def evaluate(self, z) -> ProbMatrix:
        z = np.asarray(z, dtype=np.int64)
        key = z.tobytes()
        cache = self.__dict__.setdefault("_cache", {})
        hit = cache.get(key)
        if hit is not None:
            return hit
        if len(z) != self.length:
            raise LengthMismatch(f"state has length {len(z)}, denoiser expects {self.length}")
        if np.any(z < 0) or np.any(z > self.mask_id):
            raise InvalidToken(f"state entries must lie in [0, {self.mask_id}] (mask included)")
        out = self._evaluate(z)
        if len(cache) >= CACHE_LIMIT:
            cache.clear()
        cache[key] = out
        return out

    def _evaluate(self, z: np.ndarray) -> ProbMatrix:
        raise NotImplementedError


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# -- tabular ----------------------------------------------------------------------


class TabularBayesDenoiser(Denoiser):
    """Exact conditionals of ``joint(x) = (count(x) + lam) / (N + lam * V**L)``.

    With ``lam == 0`` a context that no corpus sequence matches yields uniform
    rows and ``support_miss=True`` on the returned matrix.
    """

    def __init__(self, support, counts, n_tokens: int, lam: float = 0.0):
        support = np.asarray(support, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.float64)
        if support.ndim != 2 or support.shape[0] == 0:
            raise EmptyCorpus("tabular denoiser needs at least one sequence")
        if lam < 0:
            raise ValueError("smoothing must be non-negative")
        self.support = support
        self.counts = counts
        self.n_tokens = int(n_tokens)
        self.length = support.shape[1]
        self.lam = float(lam)
        self.total = float(counts.sum())
        self._log_norm = float(
            np.logaddexp(
                math.log(self.total),
                math.log(self.lam) + self.length * math.log(self.n_tokens)
                if self.lam > 0
                else -np.inf,
            )
        )

    def count(self, x) -> float:
        x = np.asarray(x, dtype=np.int64)
        hit = np.all(self.support == x, axis=1)
        return float(self.counts[hit].sum())

    def log_joint(self, x) -> float:
        c = self.count(x) + self.lam
        return math.log(c) - self._log_norm if c > 0 else -math.inf

    def joint_table(self) -> dict[tuple[int, ...], float]:
        """Sparse joint over the corpus support (exact only for ``lam == 0``)."""
        return {
            tuple(int(t) for t in row): math.exp(self.log_joint(row)) for row in self.support
        }

    def _evaluate(self, z):
        mask_id = self.mask_id
        masses, total = kernels.conditional_masses(
            self.support, self.counts, z, mask_id, self.n_tokens
        )
        n_masked = int(np.sum(z == mask_id))
        with np.errstate(divide="ignore"):
            log_masses = np.log(masses)
            log_total = math.log(total) if total > 0 else -math.inf
        if self.lam > 0 and n_masked > 0:
            log_v = math.log(self.n_tokens)
            log_masses = np.logaddexp(log_masses, math.log(self.lam) + (n_masked - 1) * log_v)
            log_total = float(np.logaddexp(log_total, math.log(self.lam) + n_masked * log_v))
        miss = log_total == -math.inf
        if miss:
            rows = np.full((self.length, self.n_tokens), -math.log(self.n_tokens))
        else:
            rows = log_masses - log_total
        return ProbMatrix.from_masked_rows(z, rows, mask_id, support_miss=miss and n_masked > 0)

    def to_json(self) -> dict:
        return {
            "kind": "tabular",
            "L": self.length,
            "V": self.n_tokens,
            "lambda": self.lam,
            "pairs": [
                [[int(t) for t in row], float(c)] for row, c in zip(self.support, self.counts)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TabularBayesDenoiser":
        support = [row for row, _ in obj["pairs"]]
        counts = [c for _, c in obj["pairs"]]
        return cls(np.array(support, dtype=np.int64).reshape(len(support), obj["L"]),
                   counts, obj["V"], obj["lambda"])


def _check_corpus(corpus, n_tokens=None):
    corpus = [np.asarray(x, dtype=np.int64) for x in corpus]
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    length = len(corpus[0])
    for i, x in enumerate(corpus):
        if len(x) != length:
            raise LengthMismatch(f"sequence {i} has length {len(x)}, expected {length}")
    if n_tokens is None:
        n_tokens = int(max(x.max() for x in corpus)) + 1
    for x in corpus:
        check_clean(x, n_tokens)
    return corpus, length, n_tokens


def fit_tabular(corpus, lam: float = 0.0, n_tokens: int | None = None) -> TabularBayesDenoiser:
    corpus, _, n_tokens = _check_corpus(corpus, n_tokens)
    support, counts = np.unique(np.stack(corpus), axis=0, return_counts=True)
    return TabularBayesDenoiser(support, counts.astype(np.float64), n_tokens, lam)


# -- trainable ------------------------------------------------------------------------


class TrainableDenoiser(Denoiser):
    """Token+position embeddings, mean-pooled context, one tanh layer.

    Masked positions use the embedding row ``V`` (the mask embedding); each
    position has its own output projection to ``V`` logits.
    """

    def __init__(self, length, n_tokens, hidden=16, embed=8, lr=0.1, params=None, seed=0):
        if hidden < 1:
            raise ValueError("hidden width must be positive")
        if embed < 1 or length < 1 or n_tokens < 1:
            raise ValueError("length, vocabulary size and embedding width must be positive")
        self.length = int(length)
        self.n_tokens = int(n_tokens)
        self.hidden = int(hidden)
        self.embed = int(embed)
        self.lr = float(lr)
        L, V, H, D = self.length, self.n_tokens, self.hidden, self.embed
        self.shapes = {
            "tok_emb": (V + 1, D),
            "pos_emb": (L, D),
            "w1": (H, 2 * D),
            "b1": (H,),
            "w_out": (L, V, H),
            "b_out": (L, V),
        }
        size = sum(math.prod(s) for s in self.shapes.values())
        if params is None:
            rng = make_rng(seed, 0xD0)
            params = rng.normal(0.0, 0.5, size)
        params = np.array(params, dtype=np.float64, copy=True)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.shape}")
        params.setflags(write=False)
        self.params = params

    @property
    def n_params(self) -> int:
        return self.params.size

    def unpack(self, theta=None) -> dict[str, np.ndarray]:
        theta = self.params if theta is None else theta
        out, offset = {}, 0
        for name, shape in self.shapes.items():
            n = math.prod(shape)
            out[name] = theta[offset:offset + n].reshape(shape)
            offset += n
        return out

    def with_params(self, theta) -> "TrainableDenoiser":
        return TrainableDenoiser(self.length, self.n_tokens, self.hidden, self.embed,
                                 self.lr, params=theta)

    def _forward(self, z, theta=None):
        p = self.unpack(theta)
        return kernels.mlp_forward(p["tok_emb"], p["pos_emb"], p["w1"], p["b1"],
                                   p["w_out"], p["b_out"], z)

    def _evaluate(self, z):
        logits, _, _ = self._forward(z)
        return ProbMatrix.from_masked_rows(z, _log_softmax(logits), self.mask_id)

    def masked_loss(self, x, masked, weight, theta=None) -> float:
        """``weight * sum(-log P[l, x_l])`` over ``masked`` at the corresponding state."""
        z = _mask(x, masked, self.mask_id)
        logits, _, _ = self._forward(z, theta)
        logp = _log_softmax(logits)
        idx = np.fromiter(sorted(masked), dtype=np.int64)
        return float(weight * -logp[idx, x[idx]].sum())

    def masked_loss_grad(self, x, masked, weight, theta=None) -> np.ndarray:
        z = _mask(x, masked, self.mask_id)
        p = self.unpack(theta)
        logits, h, feats = self._forward(z, theta)
        soft = np.exp(_log_softmax(logits))
        idx = np.fromiter(sorted(masked), dtype=np.int64)
        dlogits = np.zeros_like(logits)
        dlogits[idx] = soft[idx]
        dlogits[idx, x[idx]] -= 1.0
        dlogits *= weight

        g = {name: np.zeros(shape) for name, shape in self.shapes.items()}
        g["b_out"] = dlogits
        g["w_out"] = np.einsum("lv,lh->lvh", dlogits, h)
        dh = np.einsum("lvh,lv->lh", p["w_out"], dlogits)
        da = dh * (1.0 - h * h)
        g["w1"] = da.T @ feats
        g["b1"] = da.sum(axis=0)
        dfeats = da @ p["w1"]
        D = self.embed
        demb = dfeats[:, :D] + dfeats[:, D:].sum(axis=0) / self.length
        g["pos_emb"] = demb
        np.add.at(g["tok_emb"], z, demb)
        return np.concatenate([g[name].ravel() for name in self.shapes])

    def to_json(self) -> dict:
        raw = self.params.astype("<f8").tobytes()
        return {
            "kind": "mlp",
            "L": self.length,
            "V": self.n_tokens,
            "hidden": self.hidden,
            "embed": self.embed,
            "lr": self.lr,
            "params": base64.b64encode(raw).decode("ascii"),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainableDenoiser":
        theta = np.frombuffer(base64.b64decode(obj["params"]), dtype="<f8")
        return cls(obj["L"], obj["V"], obj["hidden"], obj["embed"], obj["lr"], params=theta)


def _mask(x, masked, mask_id):
    z = np.array(x, dtype=np.int64, copy=True)
    z[list(masked)] = mask_id
    return z


# -- ELBO objective -------------------------------------------------------------------


def mask_count_weight(n_masked: int, length: int) -> float:
    """Per-position weight ``L / n`` of the discrete mask-count schedule."""
    if not 1 <= n_masked <= length:
        raise ValueError("masked count must lie in [1, L]")
    return length / n_masked


def draw_mask(length: int, seed: int, *stream: int) -> frozenset[int]:
    """Draw ``n ~ Uniform{1..L}`` then a uniform size-``n`` subset of positions.

    The subset is the ``n`` smallest of ``L`` fresh uniforms, which is uniform
    over size-``n`` subsets.
    """
    u = uniforms(length + 1, seed, *stream)
    n = min(int(u[0] * length), length - 1) + 1
    return frozenset(int(i) for i in np.argsort(u[1:], kind="stable")[:n])


def masked_nll(d: Denoiser, x, masked) -> float:
    """Weighted NLL of the true tokens at ``masked`` for one mask pattern."""
    x = np.asarray(x, dtype=np.int64)
    z = _mask(x, masked, d.mask_id)
    P = d.evaluate(z)
    idx = np.fromiter(sorted(masked), dtype=np.int64)
    return mask_count_weight(len(idx), d.length) * float(-P.log_probs[idx, x[idx]].sum())


def elbo_loss_mc(d: Denoiser, x, seed: int, *stream: int) -> float:
    """One-sample Monte Carlo estimate of the masked-token ELBO (an NLL bound)."""
    x = check_clean(x, d.n_tokens)
    return masked_nll(d, x, draw_mask(d.length, seed, *stream))


def elbo_loss_gradient(d: TrainableDenoiser, x, seed: int, *stream: int) -> np.ndarray:
    """Analytic gradient of the :func:`elbo_loss_mc` draw with the same seed."""
    x = check_clean(x, d.n_tokens)
    masked = draw_mask(d.length, seed, *stream)
    return d.masked_loss_grad(x, masked, mask_count_weight(len(masked), d.length))


def elbo_exhaustive_mc_mean(d: Denoiser, x) -> float:
    """Exact expectation of :func:`elbo_loss_mc` over every (n, subset) draw."""
    x = check_clean(x, d.n_tokens)
    L = d.length
    total = 0.0
    for n in range(1, L + 1):
        subsets = list(combinations(range(L), n))
        inner = math.fsum(masked_nll(d, x, s) for s in subsets)
        total += inner / len(subsets)
    return total / L


def train(d: TrainableDenoiser, corpus, steps: int, lr: float | None = None,
          seed: int = 0) -> TrainableDenoiser:
    """Plain SGD on single-draw ELBO gradients over a reshuffled corpus."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    corpus, length, _ = _check_corpus(corpus, d.n_tokens)
    if length != d.length:
        raise LengthMismatch(f"corpus length {length} != denoiser length {d.length}")
    lr = d.lr if lr is None else float(lr)
    theta = np.array(d.params, copy=True)
    order: np.ndarray = np.empty(0, dtype=np.int64)
    epoch = 0
    for step in range(steps):
        pos = step % len(corpus)
        if pos == 0:
            order = make_rng(seed, 1, epoch).permutation(len(corpus))
            epoch += 1
        x = corpus[order[pos]]
        masked = draw_mask(length, seed, 2, step)
        grad = d.masked_loss_grad(x, masked, mask_count_weight(len(masked), length), theta)
        theta = theta - lr * grad
    out = d.with_params(theta)
    out.lr = lr
    return out


# -- persistence ----------------------------------------------------------------------


def denoiser_to_json(d: Denoiser) -> dict:
    return d.to_json()


def denoiser_from_json(obj: dict) -> Denoiser:
    kind = obj.get("kind")
    if kind == "tabular":
        return TabularBayesDenoiser.from_json(obj)
    if kind == "mlp":
        return TrainableDenoiser.from_json(obj)
    raise ValueError(f"unknown denoiser kind {kind!r}")


def save_denoiser(d: Denoiser, path) -> None:
    Path(path).write_text(json.dumps(d.to_json(), sort_keys=True) + "\n")


def load_denoiser(path) -> Denoiser:
    return denoiser_from_json(json.loads(Path(path).read_text()))
