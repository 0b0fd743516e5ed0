import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leapdecode.backend import (
    MAGIC,
    Dims,
    TinyTransformer,
    forward,
    load_weights,
    save_weights,
    seeded_weights,
    tensor_shapes,
)
from leapdecode.core import FormatError
from leapdecode.rng import SplitMix64

DIMS = Dims(16, 2, 2, 32, 8, 64)
W = seeded_weights(42, DIMS)


def full(R):
    return np.ones((R, R), dtype=bool)


def reference_forward(w, tokens, pos, mask):
    """Straight-line float64 evaluation, one row and head at a time."""
    d, H = w.dims.d_model, w.dims.n_heads
    dh = d // H
    R = len(tokens)

    def ln(x, s, b):
        mu = sum(x) / len(x)
        var = sum((v - mu) ** 2 for v in x) / len(x)
        return [(v - mu) / math.sqrt(var + 1e-5) * s[j] + b[j] for j, v in enumerate(x)]

    def matvec(x, m):
        return [sum(x[i] * float(m[i, j]) for i in range(len(x))) for j in range(m.shape[1])]

    def pe(p):
        out = []
        for j in range(d):
            ang = p / 10000 ** (2 * (j // 2) / d)
            out.append(math.sin(ang) if j % 2 == 0 else math.cos(ang))
        return out

    xs = [[float(w.tok_emb[t, j]) + pe(p)[j] for j in range(d)] for t, p in zip(tokens, pos)]
    for L in w.layers:
        hs = [ln(x, L.ln1_scale, L.ln1_bias) for x in xs]
        qs = [matvec(h, L.wq) for h in hs]
        ks = [matvec(h, L.wk) for h in hs]
        vs = [matvec(h, L.wv) for h in hs]
        new = []
        for r in range(R):
            cat = []
            for hd in range(H):
                sl = slice(hd * dh, (hd + 1) * dh)
                sc = [
                    sum(a * b for a, b in zip(qs[r][sl], ks[c][sl])) / math.sqrt(dh)
                    for c in range(R) if mask[r][c]
                ]
                vis = [c for c in range(R) if mask[r][c]]
                m = max(sc)
                e = [math.exp(s - m) for s in sc]
                z = sum(e)
                cat += [sum(e[n] / z * vs[c][sl][j] for n, c in enumerate(vis)) for j in range(dh)]
            att = matvec(cat, L.wo)
            x = [a + b for a, b in zip(xs[r], att)]
            h = ln(x, L.ln2_scale, L.ln2_bias)
            f = [a + float(b) for a, b in zip(matvec(h, L.ffn_in), L.ffn_in_bias)]
            g = [0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v**3))) for v in f]
            o = [a + float(b) for a, b in zip(matvec(g, L.ffn_out), L.ffn_out_bias)]
            new.append([a + b for a, b in zip(x, o)])
        xs = new
    probs = []
    for x in xs:
        logits = matvec(ln(x, w.final_scale, w.final_bias), w.unembed)
        m = max(logits)
        e = [math.exp(v - m) for v in logits]
        probs.append([v / sum(e) for v in e])
    return np.array(probs)


def test_rows_normalised():
    rng = np.random.default_rng(0)
    toks = rng.integers(0, 8, 20)
    out = forward(W, toks, np.arange(20), full(20))
    assert np.allclose(out.probs.sum(1), 1.0, atol=1e-6)
    assert (out.probs >= 0).all()
    assert np.array_equal(out.top_token, out.probs.argmax(1))


def test_single_token_matches_reference():
    out = forward(W, [3], [5], full(1)).probs
    assert np.abs(out - reference_forward(W, [3], [5], [[True]])).max() < 1e-6


def test_masked_sequence_matches_reference():
    rng = np.random.default_rng(1)
    toks = rng.integers(0, 8, 6).tolist()
    pos = [0, 1, 2, 3, 2, 2]
    mask = rng.random((6, 6)) < 0.6
    np.fill_diagonal(mask, True)
    out = forward(W, toks, pos, mask).probs
    assert np.abs(out - reference_forward(W, toks, pos, mask.tolist())).max() < 1e-5


def test_clone_row():
    toks = [1, 2, 7, 3, 7]
    pos = list(range(5))
    rng = np.random.default_rng(3)
    mask = rng.random((5, 5)) < 0.6
    np.fill_diagonal(mask, True)
    # duplicate row 2 (token, position id, mask row and column) as row 5
    idx = [0, 1, 2, 3, 4, 2]
    big = mask[np.ix_(idx, idx)]
    out = forward(W, [toks[i] for i in idx], [pos[i] for i in idx], big).probs
    assert np.abs(out[2] - out[5]).max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_permutation_equivariance(seed, R):
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 8, R)
    pos = rng.integers(0, 64, R)
    mask = rng.random((R, R)) < 0.5
    np.fill_diagonal(mask, True)
    perm = rng.permutation(R)
    a = forward(W, toks, pos, mask).probs
    b = forward(W, toks[perm], pos[perm], mask[np.ix_(perm, perm)]).probs
    assert np.abs(a[perm] - b).max() < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_visibility_sufficiency(seed, R):
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 8, R)
    pos = rng.integers(0, 64, R)
    mask = rng.random((R, R)) < 0.5
    np.fill_diagonal(mask, True)
    drop = int(rng.integers(0, R))
    mask[:, drop] = False
    mask[drop, drop] = True
    keep = [r for r in range(R) if r != drop]
    a = forward(W, toks, pos, mask).probs[keep]
    b = forward(W, toks[keep], pos[keep], mask[np.ix_(keep, keep)]).probs
    assert np.abs(a - b).max() < 1e-5


def test_forward_errors():
    with pytest.raises(ValueError):
        forward(W, [1, 2], [0], full(2))
    with pytest.raises(ValueError):
        forward(W, [1, 2], [0, 1], full(3))
    with pytest.raises(ValueError):
        forward(W, [1, 8], [0, 1], full(2))
    with pytest.raises(ValueError):
        forward(W, [1, 2], [0, 64], full(2))
    m = full(2)
    m[1] = False
    with pytest.raises(ValueError):
        forward(W, [1, 2], [0, 1], m)


def test_duplicate_position_ids_same_encoding():
    a = forward(W, [4], [9], full(1)).probs
    b = forward(W, [4, 4], [9, 9], np.eye(2, dtype=bool)).probs
    assert np.abs(b - a).max() < 1e-7


def test_tiny_model_never_predicts_mask():
    m = TinyTransformer(W)
    p = m.predict([7] * 10)
    assert np.all(p[:, m.vocab.mask_id] == 0.0)
    assert np.allclose(p.sum(1), 1.0)


def test_seeded_weights_fill_order():
    g = SplitMix64(42)
    d, V = DIMS.d_model, DIMS.vocab
    a = math.sqrt(6 / (V + d))
    first = ((2 * g.uniform(V * d) - 1) * a).astype(np.float32).reshape(V, d)
    assert np.array_equal(W.tok_emb, first)
    a = math.sqrt(6 / (d + d))
    wq = ((2 * g.uniform(d * d) - 1) * a).astype(np.float32).reshape(d, d)
    assert np.array_equal(W.layers[0].wq, wq)
    assert np.all(np.abs(W.unembed) <= math.sqrt(6 / (d + V)))


def test_weight_file_round_trip_and_determinism(tmp_path):
    p1, p2, p3 = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    save_weights(seeded_weights(42, DIMS), p1)
    save_weights(seeded_weights(42, DIMS), p2)
    save_weights(seeded_weights(43, DIMS), p3)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes() != p3.read_bytes()
    assert load_weights(p1).equals(W)
    blob = p1.read_bytes()
    assert blob[:6] == MAGIC
    assert struct.unpack_from("<7I", blob, 6) == (16, 2, 2, 32, 8, 64, 0)
    n = sum(int(np.prod(s)) for _, s in tensor_shapes(DIMS))
    assert len(blob) == 6 + 28 + 4 * n


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"LEAPW2" + b[6:],
        lambda b: b[:-4],
        lambda b: b[:20],
        lambda b: b + b"\0\0\0\0",
        lambda b: b[:6] + struct.pack("<7I", 16, 2, 2, 32, 8, 64, 1) + b[34:],
        lambda b: b[:6] + struct.pack("<7I", 15, 2, 2, 32, 8, 64, 0) + b[34:],
    ],
)
def test_weight_file_errors(tmp_path, mutate):
    p = tmp_path / "w"
    save_weights(W, p)
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(FormatError):
        load_weights(p)
