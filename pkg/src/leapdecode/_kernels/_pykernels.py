"""Pure numpy/Python versions of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same results (bit-identical for the PRNG, within float rounding for
the numeric kernels).
"""

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / 9007199254740992.0

NEG_INF = -1e9


def splitmix64_raw(state, n):
    """Return ``(outputs, new_state)`` for ``n`` SplitMix64 steps."""
    state &= _MASK64
    out = np.empty(n, dtype=np.uint64)
    for k in range(n):
        state = (state + _GOLDEN) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        z ^= z >> 31
        out[k] = z
    return out, state


def splitmix64_uniform(state, n):
    """Uniform doubles in [0, 1) built from the top 53 bits of each output."""
    state &= _MASK64
    out = np.empty(n, dtype=np.float64)
    for k in range(n):
        state = (state + _GOLDEN) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        z ^= z >> 31
        out[k] = (z >> 11) * _INV_2_53
    return out, state


def masked_attention(q, k, v, mask):
    """Scaled dot-product attention over heads.

    q, k, v: float32 arrays of shape (H, R, dh); mask: bool (R, R).
    """
    dh = q.shape[-1]
    scale = np.float32(1.0 / np.sqrt(dh))
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    scores = scores + np.where(mask, np.float32(0.0), np.float32(NEG_INF))[None, :, :]
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return np.matmul(w, v).astype(np.float32, copy=False)


def chain_posteriors(init, trans, obs):
    """Per-position posteriors of a first-order chain given partial evidence.

    ``obs[k]`` is the observed state or -1. Raises ValueError when the
    evidence has probability zero under the chain.
    """
    init = np.asarray(init, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.int64)
    n = obs.shape[0]
    V = init.shape[0]
    fwd = np.empty((n, V))
    bwd = np.empty((n, V))

    a = init.copy()
    for k in range(n):
        if k > 0:
            a = fwd[k - 1] @ trans
        if obs[k] >= 0:
            e = np.zeros(V)
            e[obs[k]] = a[obs[k]]
            a = e
        s = a.sum()
        if s <= 0.0:
            raise ValueError("evidence has zero probability under the chain")
        fwd[k] = a / s

    bwd[n - 1] = 1.0
    for k in range(n - 2, -1, -1):
        b = bwd[k + 1].copy()
        if obs[k + 1] >= 0:
            keep = b[obs[k + 1]]
            b[:] = 0.0
            b[obs[k + 1]] = keep
        b = trans @ b
        s = b.sum()
        if s <= 0.0:
            raise ValueError("evidence has zero probability under the chain")
        bwd[k] = b / s

    post = fwd * bwd
    post /= post.sum(axis=1, keepdims=True)
    return post


def lookahead_agrees(left, right, base):
    """True iff every feasible (left, right) evidence pair keeps argmax == base.

    Row pairs whose elementwise product sums to zero are impossible contexts
    and are skipped. Argmax ties resolve to the smallest index.
    """
    prod = left[:, None, :] * right[None, :, :]
    tot = prod.sum(axis=-1)
    feasible = tot > 0.0
    if not feasible.any():
        return True
    top = prod.argmax(axis=-1)
    return bool(np.all(top[feasible] == base))
