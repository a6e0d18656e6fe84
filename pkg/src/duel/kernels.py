"""Hot numeric kernels.

Each kernel has an ``*_jit`` loop implementation compiled by numba and a
vectorized ``*_numpy`` fallback with the same signature. The public name is
bound to one of them according to :data:`duel._jit.USE_JIT`.
"""
import numpy as np

from ._jit import USE_JIT, njit


# -- tabular conditional masses -------------------------------------------------


@njit
def conditional_masses_jit(support, counts, z, mask_id, n_tokens):
    n_rows, length = support.shape
    masses = np.zeros((length, n_tokens))
    total = 0.0
    for i in range(n_rows):
        consistent = True
        for pos in range(length):
            if z[pos] != mask_id and support[i, pos] != z[pos]:
                consistent = False
                break
        if not consistent:
            continue
        w = counts[i]
        total += w
        for pos in range(length):
            masses[pos, support[i, pos]] += w
    return masses, total


def conditional_masses_numpy(support, counts, z, mask_id, n_tokens):
    length = support.shape[1]
    revealed = z != mask_id
    ok = np.all(support[:, revealed] == z[revealed], axis=1)
    rows = support[ok]
    w = counts[ok]
    masses = np.zeros((length, n_tokens))
    for pos in range(length):
        masses[pos] = np.bincount(rows[:, pos], weights=w, minlength=n_tokens)
    return masses, float(w.sum())


# -- MLP denoiser forward pass --------------------------------------------------


@njit
def mlp_forward_jit(tok_emb, pos_emb, w1, b1, w_out, b_out, z):
    length, dim = pos_emb.shape
    hidden = w1.shape[0]
    n_tokens = b_out.shape[1]
    feats = np.empty((length, 2 * dim))
    ctx = np.zeros(dim)
    for pos in range(length):
        for j in range(dim):
            e = tok_emb[z[pos], j] + pos_emb[pos, j]
            feats[pos, j] = e
            ctx[j] += e
    for j in range(dim):
        ctx[j] /= length
    for pos in range(length):
        for j in range(dim):
            feats[pos, dim + j] = ctx[j]
    h = np.empty((length, hidden))
    for pos in range(length):
        for u in range(hidden):
            acc = b1[u]
            for j in range(2 * dim):
                acc += w1[u, j] * feats[pos, j]
            h[pos, u] = np.tanh(acc)
    logits = np.empty((length, n_tokens))
    for pos in range(length):
        for v in range(n_tokens):
            acc = b_out[pos, v]
            for u in range(hidden):
                acc += w_out[pos, v, u] * h[pos, u]
            logits[pos, v] = acc
    return logits, h, feats


def mlp_forward_numpy(tok_emb, pos_emb, w1, b1, w_out, b_out, z):
    emb = tok_emb[z] + pos_emb
    ctx = emb.mean(axis=0)
    feats = np.concatenate([emb, np.broadcast_to(ctx, emb.shape)], axis=1)
    h = np.tanh(feats @ w1.T + b1)
    logits = np.einsum("lvh,lh->lv", w_out, h) + b_out
    return logits, h, feats


if USE_JIT:
    conditional_masses = conditional_masses_jit
    mlp_forward = mlp_forward_jit
else:
    conditional_masses = conditional_masses_numpy
    mlp_forward = mlp_forward_numpy

BACKEND = "numba" if USE_JIT else "numpy"
