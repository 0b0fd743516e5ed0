import json

import pytest

from leapdecode.core import (
    DecodeComplete,
    DecodeConfig,
    DecodeTrace,
    Event,
    FormatError,
    Snapshot,
    StepRecord,
    Vocab,
    active_block,
    active_masked,
    apply_decodes,
    new_state,
    read_config_file,
    state_from_tokens,
    write_config_file,
)

V = Vocab(6, 5)
M = 5


def cfg(**kw):
    return DecodeConfig(**{"block_size": 4, "gen_len": 4, **kw})


def test_vocab_invariants():
    with pytest.raises(ValueError):
        Vocab(1, 0)
    with pytest.raises(ValueError):
        Vocab(4, 4)
    assert Vocab(3, 2).render([0, 2, 1]) == "0 [M] 1"


def test_new_state_basic():
    s = new_state([3, 1], 4, cfg(), V)
    assert s.tokens == [3, 1, M, M, M, M]
    assert s.masked == {2, 3, 4, 5}
    assert s.step == 0
    s.check()


def test_new_state_empty_prompt():
    s = new_state([], 32, cfg(block_size=32, gen_len=32), V)
    assert len(s.masked) == 32
    assert list(active_block(s)) == list(range(32))


def test_new_state_rejects_mask_in_prompt():
    with pytest.raises(ValueError):
        new_state([1, M], 4, cfg(), V)


def test_new_state_rejects_bad_gen_len():
    with pytest.raises(ValueError):
        new_state([1], 6, cfg(), V)


def test_active_block_rules():
    s = state_from_tokens([0, 1, 2, 3, 4, M, M, 0], 0, 4, M)
    assert active_block(s) == range(4, 8)
    s = state_from_tokens([M, 1, 2, 3, 4, M, 0, 0], 0, 4, M)
    assert active_block(s) == range(0, 4)
    assert active_masked(s) == [0]
    with pytest.raises(DecodeComplete):
        active_block(state_from_tokens([0, 1], 0, 2, M))


def test_active_block_offset_by_prompt():
    s = state_from_tokens([0, 0, 0, 1, M, M], 2, 2, M)
    assert active_block(s) == range(4, 6)


def test_apply_decodes():
    s = state_from_tokens([M, M], 0, 2, M)
    t = apply_decodes(s, [(0, 2)])
    assert t.tokens == [2, M] and t.masked == {1} and t.step == 1
    assert s.tokens == [M, M]  # input untouched
    with pytest.raises(ValueError):
        apply_decodes(s, [])
    with pytest.raises(ValueError):
        apply_decodes(s, [(0, 2), (0, 3)])
    with pytest.raises(ValueError):
        apply_decodes(t, [(0, 1)])
    with pytest.raises(ValueError):
        apply_decodes(s, [(1, M)])


def test_config_validation():
    for bad in ({"phi": 0.0}, {"tau": 1.5}, {"eta": -0.1}, {"strategy": "x"},
                {"visibility_mode": "y"}, {"block_size": 0}, {"gen_len": 5}):
        with pytest.raises(ValueError):
            cfg(**bad)
    c = DecodeConfig()
    assert (c.phi, c.tau, c.eta, c.block_size) == (0.9, 0.7, 0.2, 32)
    assert c.visibility_mode == "augment" and c.union_cbpd is False


def test_config_file_round_trip(tmp_path):
    c = DecodeConfig(strategy="cbpd", phi=0.8, union_cbpd=True, seed=11, block_size=8, gen_len=16)
    p = tmp_path / "c.cfg"
    write_config_file(p, c, {"n": 3})
    vals = read_config_file(p)
    assert vals["n"] == "3"
    assert DecodeConfig.from_mapping(vals) == c


def test_config_file_comments_and_aliases(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# header\nblock-size = 4  # inline\ngen_len=8\nmode = replace\n")
    c = DecodeConfig.from_mapping(read_config_file(p))
    assert c.block_size == 4 and c.visibility_mode == "replace"
    p.write_text("nonsense line\n")
    with pytest.raises(FormatError):
        read_config_file(p)


def _trace():
    return DecodeTrace([
        StepRecord(1, 6, [Event(2, 1, 0.95, "threshold")], [Snapshot(2, 1, 0.95), Snapshot(3, 0, 0.4)]),
        StepRecord(2, 6, [Event(3, 0, 0.5, "fallback")], [Snapshot(3, 0, 0.5)]),
    ])


def test_trace_round_trip_and_schema():
    tr = _trace()
    text = tr.dumps()
    lines = text.strip().split("\n")
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert set(rec) == {"step", "forward_len", "events", "snapshots"}
    assert set(rec["events"][0]) == {"pos", "token", "conf", "mech"}
    back = DecodeTrace.loads(text)
    assert back.dumps() == text
    assert back.decoded == 2 and back.n_steps == 2


def test_trace_validation():
    tr = _trace()
    tr.validate()
    tr.steps[1].events[0] = Event(2, 1, 0.5, "fallback")
    with pytest.raises(FormatError):
        tr.validate()
    with pytest.raises(FormatError):
        DecodeTrace.loads('{"step": 1}\n')
    with pytest.raises(FormatError):
        DecodeTrace.loads("not json\n")
