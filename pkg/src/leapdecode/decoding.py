"""Decoding strategies and the block-wise decode loop.

``baseline`` commits one token per step, ``cbpd`` commits every position
whose confidence exceeds ``phi``, and ``leap`` commits positions whose
greedy prediction survives a lookahead perturbation and clears ``tau``.
Every strategy falls back to the single most confident position when its
rule selects nothing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import superposition as sp
from .core import (
    DecodeConfig,
    DecodeTrace,
    Event,
    SequenceState,
    Snapshot,
    StepRecord,
    active_masked,
    apply_decodes,
    new_state,
)


def greedy(dist) -> tuple:
    """(argmax token, its probability); ties go to the smaller token id."""
    dist = np.asarray(dist)
    t = int(dist.argmax())
    return t, float(dist[t])


def _fallback(dists: Mapping[int, np.ndarray]) -> Event:
    best = None
    for pos in sorted(dists):
        tok, conf = greedy(dists[pos])
        if best is None or conf > best.conf:
            best = Event(pos, tok, conf, "fallback")
    return best


def step_cbpd(state: SequenceState, dists: Mapping[int, np.ndarray], phi: float) -> list:
    if not dists:
        raise ValueError("no masked positions to decode")
    events = []
    for pos in sorted(dists):
        tok, conf = greedy(dists[pos])
        if conf > phi:
            events.append(Event(pos, tok, conf, "threshold"))
    return events or [_fallback(dists)]


def step_baseline(state: SequenceState, dists: Mapping[int, np.ndarray]) -> list:
    if not dists:
        raise ValueError("no masked positions to decode")
    return [_fallback(dists)]


@dataclass
class LeapStep:
    events: list
    prev_dists: dict
    forward_len: int
    probs: np.ndarray  # plain (original-row) distributions, (L, V)
    bootstrap: bool
    candidate_sets: dict = dataclasses.field(default_factory=dict)
    orig_preds: dict = dataclasses.field(default_factory=dict)
    copy_preds: dict = dataclasses.field(default_factory=dict)
    gated: set = dataclasses.field(default_factory=set)


def _leap_events(preds: Mapping, gated: set, config: DecodeConfig) -> list:
    events = []
    for pos in sorted(preds):
        tok, conf = preds[pos][0], preds[pos][1]
        if pos in gated:
            events.append(Event(pos, tok, conf, "consistency"))
        elif config.union_cbpd and conf > config.phi:
            events.append(Event(pos, tok, conf, "threshold"))
    if not events:
        events = [_fallback({p: v[2] for p, v in preds.items()})]
    return events


def step_leap(state: SequenceState, model, config: DecodeConfig) -> LeapStep:
    """One lookahead step.

    Candidates come from ``state.prev_dists``; when those are missing for
    the active block (first step of a block) the step is a plain CBPD step
    that only populates them.
    """
    active = active_masked(state)
    L = len(state.tokens)
    prev = state.prev_dists or {}

    if not all(p in prev for p in active):
        probs = model.predict(state.tokens)
        dists = {p: probs[p] for p in active}
        events = step_cbpd(state, dists, config.phi)
        done = {e.pos for e in events}
        return LeapStep(
            events=events,
            prev_dists={p: probs[p] for p in active if p not in done},
            forward_len=L,
            probs=probs,
            bootstrap=True,
        )

    cands = sp.prune_candidates({p: prev[p] for p in active}, config.eta, state.mask_id)
    if getattr(model, "supports_superposition", False):
        layout = sp.build_layout(state, cands)
        mask = sp.build_visibility(layout, config.visibility_mode)
        out = model.forward(layout.tokens, layout.position_ids, mask)
        probs = out.probs[:L]
        orig, copy = sp.extract(layout, out.probs)
        gated = sp.consistent_set(orig, copy, config.tau)
        forward_len = len(layout)
    else:
        # exact lookahead (no attention to superpose over)
        probs = model.predict(state.tokens)
        orig = {p: (*greedy(probs[p]), probs[p]) for p in active}
        copy = {}
        gated = {
            p
            for p in active
            if orig[p][1] >= config.tau
            and model.lookahead_converged(state.tokens, p, cands)
        }
        forward_len = sp.superposed_length(L, cands)

    events = _leap_events(orig, gated, config)
    done = {e.pos for e in events}
    return LeapStep(
        events=events,
        prev_dists={p: probs[p] for p in active if p not in done},
        forward_len=forward_len,
        probs=probs,
        bootstrap=False,
        candidate_sets=cands,
        orig_preds=orig,
        copy_preds=copy,
        gated=gated,
    )


def decode_step(state: SequenceState, model, config: DecodeConfig):
    """Run one step of ``config.strategy``.

    Returns ``(events, probs, forward_len, new_prev_dists, leap_step)``.
    """
    if config.strategy == "leap":
        ls = step_leap(state, model, config)
        return ls.events, ls.probs, ls.forward_len, ls.prev_dists, ls
    probs = model.predict(state.tokens)
    dists = {p: probs[p] for p in active_masked(state)}
    if config.strategy == "cbpd":
        events = step_cbpd(state, dists, config.phi)
    else:
        events = step_baseline(state, dists)
    return events, probs, len(state.tokens), None, None


def snapshot(state: SequenceState, probs: np.ndarray, with_probs: bool = True) -> list:
    out = []
    for p in sorted(state.masked):
        tok, conf = greedy(probs[p])
        out.append(Snapshot(p, tok, conf, probs[p].copy() if with_probs else None))
    return out


def run_decode(
    model,
    prompt,
    config: DecodeConfig,
    *,
    state: Optional[SequenceState] = None,
    snapshots: bool = True,
    record_probs: bool = True,
):
    """Decode to completion. Returns ``(tokens, trace)``.

    Pass ``state`` to decode an arbitrary partially masked sequence;
    ``prompt`` is then ignored.
    """
    if state is None:
        state = new_state(prompt, config.gen_len, config, model.vocab)
    trace = DecodeTrace()
    limit = len(state.masked)
    while state.masked:
        events, probs, flen, prev, _ = decode_step(state, model, config)
        snaps = snapshot(state, probs, record_probs) if snapshots else []
        state = apply_decodes(state, [(e.pos, e.token) for e in events])
        state.prev_dists = prev
        trace.steps.append(StepRecord(state.step, flen, events, snaps))
        if state.step > limit:
            raise RuntimeError("decode loop failed to make progress")
    return list(state.tokens), trace


@dataclass
class ConvergenceTarget:
    step: dict  # position -> tau_i
    token: dict  # position -> x_i^*

    def to_json(self) -> dict:
        return {
            "positions": [
                {"pos": p, "step": self.step[p], "token": self.token[p]} for p in sorted(self.step)
            ]
        }

    @classmethod
    def from_json(cls, d) -> "ConvergenceTarget":
        step, token = {}, {}
        for r in d["positions"]:
            step[int(r["pos"])] = int(r["step"])
            token[int(r["pos"])] = int(r["token"])
        return cls(step, token)

    @classmethod
    def from_trace(cls, trace: DecodeTrace) -> "ConvergenceTarget":
        step, token = {}, {}
        for s, e in trace.events():
            step[e.pos] = s
            token[e.pos] = e.token
        return cls(step, token)


def convergence_target(model, prompt, config: DecodeConfig, **kw):
    """Run CBPD to completion; returns ``(target, trace)``."""
    cfg = config.replace(strategy="cbpd")
    _, trace = run_decode(model, prompt, cfg, **kw)
    return ConvergenceTarget.from_trace(trace), trace
