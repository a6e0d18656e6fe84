import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duel import _jit, kernels


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 30), st.integers(0, 2**31))
def test_conditional_masses_agree(L, V, n_rows, seed):
    rng = np.random.default_rng(seed)
    support = rng.integers(0, V, (n_rows, L))
    counts = rng.integers(1, 5, n_rows).astype(float)
    z = np.where(rng.random(L) < 0.6, V, rng.integers(0, V, L))
    a, ta = kernels.conditional_masses_jit(support, counts, z, V, V)
    b, tb = kernels.conditional_masses_numpy(support, counts, z, V, V)
    np.testing.assert_array_equal(a, b)
    assert ta == tb


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 6), st.integers(1, 5),
       st.integers(0, 2**31))
def test_mlp_forward_agrees(L, V, H, D, seed):
    rng = np.random.default_rng(seed)
    args = (rng.normal(size=(V + 1, D)), rng.normal(size=(L, D)), rng.normal(size=(H, 2 * D)),
            rng.normal(size=H), rng.normal(size=(L, V, H)), rng.normal(size=(L, V)),
            rng.integers(0, V + 1, L))
    for a, b in zip(kernels.mlp_forward_jit(*args), kernels.mlp_forward_numpy(*args)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_backend_matches_flag():
    assert kernels.BACKEND == ("numba" if _jit.USE_JIT else "numpy")


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, DUEL_DISABLE_JIT=flag)
    out = subprocess.run([sys.executable, "-c", "from duel import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
