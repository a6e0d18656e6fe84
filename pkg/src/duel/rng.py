"""Counter-based random streams.

Hot paths (token sampling, ELBO mask draws) read uniforms from a Philox
generator whose 256-bit counter is set to an address such as
``(seed, sequence_index, step)``. Draws therefore depend only on the address,
never on evaluation order, so parallel drivers reproduce serial runs exactly.

:func:`make_rng` gives a full ``numpy.random.Generator`` for colder paths.
"""
import threading

import numpy as np

_KEY = np.random.SeedSequence(0x5EED_D0E1).generate_state(2, dtype=np.uint64)
_local = threading.local()
_MASK64 = (1 << 64) - 1


def _philox():
    bg = getattr(_local, "bg", None)
    if bg is None:
        bg = _local.bg = np.random.Philox(key=_KEY)
        _local.state = bg.state
    return bg, _local.state


def uniforms(n: int, seed: int, *address: int) -> np.ndarray:
    """``n`` uniforms in [0, 1) addressed by ``(seed, *address)``; at most 2 address words."""
    if len(address) > 2:
        raise ValueError("at most two address words besides the seed")
    words = [0, 0, 0, int(seed) & _MASK64]
    for i, a in enumerate(address):
        words[1 + i] = int(a) & _MASK64
    bg, state = _philox()
    state["state"]["counter"][:] = words
    state["buffer_pos"] = 4
    state["has_uint32"] = 0
    bg.state = state
    raw = bg.random_raw(n)
    return (raw >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def step_uniforms(seed: int, index: int, length: int) -> np.ndarray:
    """Uniforms for sequence ``index``: row ``t`` feeds step ``t``.

    Each step owns its own fixed range of ``ceil(L/4)`` Philox counter blocks,
    so a step's draws depend on ``(seed, index, t)`` alone.
    """
    stride = 4 * -(-length // 4)
    return uniforms(length * stride, seed, index).reshape(length, stride)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
