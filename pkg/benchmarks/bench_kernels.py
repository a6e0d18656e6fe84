"""Compare the numba kernels against their numpy fallbacks.

Both variants are always importable, so one process times them side by side.
Each kernel is called once before timing to pay the compilation cost, then
the best of several ``timeit`` repeats is reported per call.

    python benchmarks/bench_kernels.py [--repeat 5] [--number 2000]
"""
import argparse
import timeit

import numpy as np

from duel import TrainableDenoiser, fit_tabular, kernels
from duel._jit import USE_JIT


def tabular_case(length, n_tokens, n_support, seed=0):
    rng = np.random.default_rng(seed)
    corpus = list(rng.integers(0, n_tokens, size=(n_support, length)))
    d = fit_tabular(corpus, n_tokens=n_tokens)
    z = corpus[0].copy()
    z[rng.choice(length, size=length // 2, replace=False)] = d.mask_id
    args = (d.support, d.counts, z, d.mask_id, n_tokens)
    return f"conditional_masses L={length} V={n_tokens} support={n_support}", \
        kernels.conditional_masses_jit, kernels.conditional_masses_numpy, args


def mlp_case(length, n_tokens, hidden, seed=0):
    d = TrainableDenoiser(length, n_tokens, hidden=hidden, seed=seed)
    p = d.unpack()
    z = np.full(length, d.mask_id, dtype=np.int64)
    z[::2] = np.arange(0, length, 2) % n_tokens
    args = (p["tok_emb"], p["pos_emb"], p["w1"], p["b1"], p["w_out"], p["b_out"], z)
    return f"mlp_forward L={length} V={n_tokens} hidden={hidden}", \
        kernels.mlp_forward_jit, kernels.mlp_forward_numpy, args


def best_per_call(fn, args, repeat, number):
    fn(*args)  # warm-up: compilation for the jit path, caches for numpy
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=2000)
    args = parser.parse_args(argv)

    cases = [tabular_case(4, 3, 50), tabular_case(8, 3, 500), tabular_case(16, 4, 5000),
             mlp_case(4, 3, 8), mlp_case(8, 3, 16), mlp_case(32, 8, 64)]
    print(f"library dispatches to: {kernels.BACKEND} (USE_JIT={USE_JIT})")
    print(f"{'kernel':<46} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for name, jit_fn, np_fn, call_args in cases:
        t_jit = best_per_call(jit_fn, call_args, args.repeat, args.number)
        t_np = best_per_call(np_fn, call_args, args.repeat, args.number)
        print(f"{name:<46} {t_jit * 1e6:>10.2f} {t_np * 1e6:>10.2f} {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
