"""Convergence statistics and the lookahead oracle.

* ``early_stats``: per confidence bin, how often a pre-commit prediction
  already matched the eventual committed token, and how often it then
  stayed matched until commit.
* ``prev_conf_cdf``: distribution of the probability assigned to the
  committed token one step before it was committed.
* ``oracle_converged`` / ``detector_quality``: brute-force check of
  one-step-future invariance with plain forwards, and precision/recall of
  the superposed detector against it.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import EnumerationBoundError, FormatError, active_masked, apply_decodes, new_state
from .decoding import ConvergenceTarget, greedy, step_leap
from .exactmodel import ImpossibleContextError

ORACLE_BOUND = 4096


def default_edges(width: float = 0.1) -> np.ndarray:
    n = int(round(1.0 / width))
    return np.linspace(0.0, 1.0, n + 1)


def _bin_index(edges: np.ndarray, c: float) -> int:
    k = int(np.searchsorted(edges, c, side="right")) - 1
    return min(max(k, 0), len(edges) - 2)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(round(float(x), 12))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class BinnedStats:
    edges: np.ndarray
    count: np.ndarray
    correct: np.ndarray
    converged: np.ndarray

    def early_correct(self) -> list:
        return [None if n == 0 else c / n for n, c in zip(self.count, self.correct)]

    def early_converged(self) -> list:
        return [None if n == 0 else c / n for n, c in zip(self.count, self.converged)]

    def merge(self, other: "BinnedStats") -> "BinnedStats":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("bin edges differ")
        return BinnedStats(
            self.edges,
            self.count + other.count,
            self.correct + other.correct,
            self.converged + other.converged,
        )

    def to_csv(self) -> str:
        rows = zip(
            self.edges[:-1].tolist(),
            self.edges[1:].tolist(),
            self.count.tolist(),
            self.early_correct(),
            self.early_converged(),
        )
        return _csv_text(["bin_lo", "bin_hi", "count", "early_correct", "early_converged"], rows)


def _snapshots_by_pos(trace) -> dict:
    by_pos = {}
    for rec in trace.steps:
        for s in rec.snapshots:
            by_pos.setdefault(s.pos, []).append((rec.step, s))
    return by_pos


def early_stats(trace, target: ConvergenceTarget, edges: Optional[np.ndarray] = None) -> BinnedStats:
    edges = default_edges() if edges is None else np.asarray(edges, dtype=np.float64)
    nb = len(edges) - 1
    count = np.zeros(nb, dtype=np.int64)
    correct = np.zeros(nb, dtype=np.int64)
    converged = np.zeros(nb, dtype=np.int64)
    for pos, snaps in _snapshots_by_pos(trace).items():
        if pos not in target.step:
            raise ValueError(f"trace has snapshots for position {pos} missing from the target")
        tau, star = target.step[pos], target.token[pos]
        if any(s > tau for s, _ in snaps):
            raise ValueError(f"position {pos} is still masked after its target step")
        hits = [sn.token == star for _, sn in snaps]
        # suffix_ok[k]: prediction matches at snapshot k and every later one up to commit
        suffix_ok = list(itertools.accumulate(reversed(hits), lambda acc, h: acc and h))[::-1]
        for k, (s, sn) in enumerate(snaps):
            if s >= tau:
                continue
            b = _bin_index(edges, sn.conf)
            count[b] += 1
            correct[b] += hits[k]
            converged[b] += suffix_ok[k]
    return BinnedStats(edges, count, correct, converged)


@dataclass
class ConfidenceCdf:
    edges: np.ndarray
    counts: np.ndarray
    values: np.ndarray  # sorted
    excluded: int

    @property
    def density(self) -> np.ndarray:
        n = self.counts.sum()
        if n == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / (n * np.diff(self.edges))

    @property
    def cdf(self) -> np.ndarray:
        n = self.counts.sum()
        if n == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return np.cumsum(self.counts) / n

    def value_at(self, q: float) -> Optional[float]:
        """Smallest recorded value whose empirical CDF reaches ``q``."""
        if len(self.values) == 0:
            return None
        k = max(int(math.ceil(q * len(self.values))) - 1, 0)
        return float(self.values[k])

    def to_csv(self) -> str:
        rows = zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.density.tolist(), self.cdf.tolist())
        return _csv_text(["bin_lo", "bin_hi", "density", "cdf"], rows)


def prev_conf_cdf(traces: Sequence, targets: Sequence, edges: Optional[np.ndarray] = None) -> ConfidenceCdf:
    if not traces:
        raise ValueError("empty corpus")
    if len(traces) != len(targets):
        raise ValueError("need one target per trace")
    edges = default_edges() if edges is None else np.asarray(edges, dtype=np.float64)
    values, excluded = [], 0
    for trace, target in zip(traces, targets):
        at = {}
        for rec in trace.steps:
            for s in rec.snapshots:
                at[(rec.step, s.pos)] = s
        for pos in sorted(target.step):
            tau, star = target.step[pos], target.token[pos]
            sn = at.get((tau - 1, pos))
            if sn is None:
                excluded += 1
                continue
            if sn.probs is not None:
                values.append(float(sn.probs[star]))
            elif sn.token == star:
                values.append(sn.conf)
            else:
                raise FormatError("snapshot lacks the full distribution needed here (record probs)")
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    for v in values:
        counts[_bin_index(edges, v)] += 1
    return ConfidenceCdf(edges, counts, np.sort(np.array(values)), excluded)


# ---------------------------------------------------------------- oracle


def oracle_converged(model, state, i: int, candidate_sets, bound: int = ORACLE_BOUND) -> bool:
    """Does the greedy token at ``i`` survive every one-step future?

    A future fills any subset of the other candidate-owning masked
    positions with one of their candidates. Uses plain predictions only.
    """
    if i not in state.masked:
        raise ValueError(f"position {i} is not masked")
    others = [j for j in sorted(candidate_sets) if j != i and j in state.masked]
    options = [[None] + list(candidate_sets[j].token_ids) for j in others]
    size = math.prod(len(o) for o in options)
    if size > bound:
        raise EnumerationBoundError(f"{size} futures exceed the bound of {bound}")
    tokens = list(state.tokens)
    base = greedy(model.predict(tokens)[i])[0]
    for combo in itertools.product(*options):
        if all(c is None for c in combo):
            continue
        ctx = list(tokens)
        for j, c in zip(others, combo):
            if c is not None:
                ctx[j] = c
        try:
            probs = model.predict(ctx)
        except ImpossibleContextError:
            continue
        if greedy(probs[i])[0] != base:
            return False
    return True


@dataclass
class DetectorRow:
    item: int
    step: int
    detected: int
    oracle: int
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        return None if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        return None if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)


@dataclass
class DetectorReport:
    rows: list = field(default_factory=list)

    def totals(self) -> DetectorRow:
        return DetectorRow(
            -1,
            -1,
            sum(r.detected for r in self.rows),
            sum(r.oracle for r in self.rows),
            sum(r.tp for r in self.rows),
            sum(r.fp for r in self.rows),
            sum(r.fn for r in self.rows),
        )

    def to_csv(self) -> str:
        header = ["item", "step", "detected", "oracle", "tp", "fp", "fn", "precision", "recall"]
        out = []
        for r in self.rows + [self.totals()]:
            label = "all" if r.item < 0 else r.item
            step = "" if r.step < 0 else r.step
            out.append([label, step, r.detected, r.oracle, r.tp, r.fp, r.fn, r.precision, r.recall])
        return _csv_text(header, out)


def detector_quality(model, prompts: Sequence, config, bound: int = ORACLE_BOUND) -> DetectorReport:
    """Compare the superposed detector's gated set with the brute-force oracle."""
    cfg = config.replace(strategy="leap")
    report = DetectorReport()
    for item, prompt in enumerate(prompts):
        state = new_state(prompt, cfg.gen_len, cfg, model.vocab)
        while state.masked:
            ls = step_leap(state, model, cfg)
            if not ls.bootstrap:
                oracle = {
                    i
                    for i in active_masked(state)
                    if ls.orig_preds[i][1] >= cfg.tau
                    and oracle_converged(model, state, i, ls.candidate_sets, bound)
                }
                det = ls.gated
                report.rows.append(
                    DetectorRow(
                        item,
                        state.step + 1,
                        len(det),
                        len(oracle),
                        len(det & oracle),
                        len(det - oracle),
                        len(oracle - det),
                    )
                )
            state = apply_decodes(state, [(e.pos, e.token) for e in ls.events])
            state.prev_dists = ls.prev_dists
    return report
