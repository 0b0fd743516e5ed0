import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leapdecode.backend import ForwardOutput
from leapdecode.core import DecodeConfig, Vocab, active_masked, new_state, state_from_tokens
from leapdecode.decoding import (
    ConvergenceTarget,
    convergence_target,
    greedy,
    run_decode,
    step_baseline,
    step_cbpd,
    step_leap,
)
from leapdecode.exactmodel import MarkovDenoiser, MarkovSpec

from conftest import tiny_model

V5 = Vocab(5, 4)


def onehotish(tok, conf, V=5, mask=4):
    d = np.zeros(V)
    rest = [t for t in range(V) if t not in (tok, mask)]
    d[rest] = (1 - conf) / len(rest)
    d[tok] = conf
    return d


class ScriptedModel:
    """Superposition-capable fake: fixed original rows and copy rows."""

    supports_superposition = True

    def __init__(self, L, orig, copy):
        self.vocab = V5
        self.L = L
        self.orig = orig
        self.copy = copy

    def predict(self, tokens):
        return np.stack([self.orig.get(p, onehotish(0, 0.3)) for p in range(len(tokens))])

    def forward(self, tokens, position_ids, mask):
        rows = []
        for r, (t, p) in enumerate(zip(tokens, position_ids)):
            if r < self.L:
                rows.append(self.orig.get(int(p), onehotish(0, 0.3)))
            elif t == self.vocab.mask_id:
                rows.append(self.copy[int(p)])
            else:
                rows.append(np.full(5, 0.2))
        return ForwardOutput.from_probs(np.stack(rows))


def test_greedy_examples():
    assert greedy([0.1, 0.7, 0.2]) == (1, 0.7)
    assert greedy([0.5, 0.5]) == (0, 0.5)
    assert greedy(np.eye(5)[3]) == (3, 1.0)


def test_cbpd_examples():
    s = state_from_tokens([4] * 3, 0, 3, 4)
    d = {0: onehotish(1, 0.95), 1: onehotish(2, 0.91), 2: onehotish(0, 0.40)}
    ev = step_cbpd(s, d, 0.9)
    assert [(e.pos, e.token, e.mech) for e in ev] == [(0, 1, "threshold"), (1, 2, "threshold")]
    d = {0: onehotish(1, 0.5), 1: onehotish(2, 0.9), 2: onehotish(0, 0.40)}
    ev = step_cbpd(s, d, 0.9)
    assert [(e.pos, e.token, e.mech) for e in ev] == [(1, 2, "fallback")]
    one = state_from_tokens([4], 0, 1, 4)
    assert [e.mech for e in step_cbpd(one, {0: onehotish(3, 0.99)}, 0.9)] == ["threshold"]


def test_baseline_examples():
    s = state_from_tokens([4, 4], 0, 2, 4)
    assert step_baseline(s, {0: onehotish(0, 0.3), 1: onehotish(1, 0.6)})[0].pos == 1
    assert step_baseline(s, {0: onehotish(0, 0.5), 1: onehotish(1, 0.5)})[0].pos == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_cbpd_phi_monotone_and_fallback(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    s = state_from_tokens([4] * n, 0, n, 4)
    d = {p: np.append(rng.dirichlet(np.ones(4) * 0.3), 0.0) for p in range(n)}
    lo = {e.pos for e in step_cbpd(s, d, 0.8) if e.mech == "threshold"}
    hi = {e.pos for e in step_cbpd(s, d, 0.9) if e.mech == "threshold"}
    assert hi <= lo
    ev = step_cbpd(s, d, 0.9)
    confs = {p: d[p].max() for p in d}
    if all(c <= 0.9 for c in confs.values()):
        assert len(ev) == 1 and ev[0].mech == "fallback"
        assert ev[0].conf == max(confs.values())
        assert ev[0].pos == min(p for p in confs if confs[p] == ev[0].conf)
    else:
        assert all(e.mech == "threshold" and e.conf > 0.9 for e in ev)


def _leap_state():
    s = state_from_tokens([1, 4, 4, 4, 4], 1, 4, 4)
    s.prev_dists = {p: onehotish(0, 0.6) for p in (1, 2, 3, 4)}
    return s


def test_leap_examples():
    orig = {1: onehotish(0, 0.75), 2: onehotish(2, 0.65), 3: onehotish(1, 0.85), 4: onehotish(3, 0.3)}
    copy = {1: onehotish(0, 0.5), 2: onehotish(2, 0.5), 3: onehotish(2, 0.6), 4: onehotish(3, 0.3)}
    m = ScriptedModel(5, orig, copy)
    cfg = DecodeConfig(block_size=4, gen_len=4, tau=0.7, phi=0.8)
    ls = step_leap(_leap_state(), m, cfg)
    assert not ls.bootstrap
    assert [(e.pos, e.token, e.mech) for e in ls.events] == [(1, 0, "consistency")]
    assert ls.gated == {1}
    assert ls.forward_len == 5 + 4 * 2  # one copy and one candidate each
    assert set(ls.prev_dists) == {2, 3, 4}
    # union adds the confident but inconsistent position 3
    ls = step_leap(_leap_state(), m, cfg.replace(union_cbpd=True))
    assert {(e.pos, e.mech) for e in ls.events} == {(1, "consistency"), (3, "threshold")}


def test_leap_fallback_and_gate_monotone():
    orig = {1: onehotish(0, 0.65), 2: onehotish(2, 0.62), 3: onehotish(1, 0.85), 4: onehotish(3, 0.3)}
    copy = {1: onehotish(0, 0.5), 2: onehotish(2, 0.5), 3: onehotish(2, 0.6), 4: onehotish(3, 0.3)}
    m = ScriptedModel(5, orig, copy)
    cfg = DecodeConfig(block_size=4, gen_len=4)
    ls = step_leap(_leap_state(), m, cfg.replace(tau=0.7))
    assert [(e.pos, e.mech) for e in ls.events] == [(3, "fallback")]
    loose = step_leap(_leap_state(), m, cfg.replace(tau=0.6)).gated
    tight = step_leap(_leap_state(), m, cfg.replace(tau=0.8)).gated
    assert tight <= loose and loose == {1, 2}


def test_leap_bootstrap():
    s = state_from_tokens([1, 4, 4], 1, 2, 4)
    m = ScriptedModel(3, {1: onehotish(0, 0.95), 2: onehotish(1, 0.5)}, {})
    ls = step_leap(s, m, DecodeConfig(block_size=2, gen_len=2))
    assert ls.bootstrap and ls.forward_len == 3
    assert [e.pos for e in ls.events] == [1]
    assert set(ls.prev_dists) == {2}


@pytest.mark.parametrize("strategy", ["baseline", "cbpd", "leap"])
def test_run_decode_contracts(strategy, model):
    cfg = DecodeConfig(strategy=strategy, block_size=4, gen_len=8)
    tokens, trace = run_decode(model, [1, 2], cfg)
    trace.validate()
    assert trace.decoded == 8
    assert 1 <= trace.n_steps <= 8
    assert model.vocab.mask_id not in tokens
    if strategy == "baseline":
        assert trace.n_steps == 8
    # block order
    blocks = [(e.pos - 2) // 4 for _, e in trace.events()]
    assert blocks == sorted(blocks)
    # snapshots cover all masked positions at each step
    remaining = set(range(2, 10))
    for rec in trace.steps:
        assert {s.pos for s in rec.snapshots} == remaining
        remaining -= {e.pos for e in rec.events}


def test_cbpd_phi_one_degenerates_to_baseline(model):
    cfg = DecodeConfig(strategy="cbpd", phi=1.0, block_size=4, gen_len=8)
    _, trace = run_decode(model, [3], cfg)
    assert trace.n_steps == 8
    assert all(e.mech == "fallback" for _, e in trace.events())


def test_run_decode_deterministic(model):
    cfg = DecodeConfig(strategy="leap", block_size=4, gen_len=8, tau=0.3)
    a = run_decode(model, [1, 2], cfg)[1].dumps()
    b = run_decode(model, [1, 2], cfg)[1].dumps()
    assert a == b


def test_leap_forward_len_bound(model):
    cfg = DecodeConfig(strategy="leap", block_size=8, gen_len=16, tau=0.3, eta=0.1)
    state = new_state([1], 16, cfg, model.vocab)
    _, trace = run_decode(model, [1], cfg)
    masked = set(state.masked)
    for rec in trace.steps:
        act = [p for p in masked if (p - 1) // 8 == (min(masked) - 1) // 8]
        assert rec.forward_len <= 17 + len(act) * (1 + 10)
        masked -= {e.pos for e in rec.events}


def test_convergence_target(model):
    cfg = DecodeConfig(block_size=4, gen_len=8)
    target, trace = convergence_target(model, [1, 2], cfg)
    tokens = run_decode(model, [1, 2], cfg.replace(strategy="cbpd"))[0]
    assert set(target.step) == set(range(2, 10))
    assert all(1 <= s <= trace.n_steps for s in target.step.values())
    assert all(target.token[p] == tokens[p] for p in target.step)
    # replay: at step tau_i - 1 the greedy prediction already equals x*
    snaps = {(rec.step, s.pos): s for rec in trace.steps for s in rec.snapshots}
    for p, s in target.step.items():
        assert snaps[(s, p)].token == target.token[p]
    assert ConvergenceTarget.from_json(target.to_json()) == target


def test_markov_leap_exact_runs():
    spec = MarkovSpec(2, [0.5, 0.5], [[0.95, 0.05], [0.1, 0.9]])
    m = MarkovDenoiser(spec)
    cfg = DecodeConfig(strategy="leap", block_size=8, gen_len=16)
    tokens, trace = run_decode(m, [0], cfg)
    trace.validate()
    assert trace.decoded == 16 and 2 not in tokens
    cb = run_decode(m, [0], cfg.replace(strategy="cbpd"))[1]
    assert trace.n_steps <= cb.n_steps
