"""Superposed-context construction for lookahead consistency checks.

A superposed sequence is the original sequence followed, for every masked
position i of the active block, by a mask copy of i and then the candidate
tokens for i, all carrying position id i. A visibility mask keeps the
original rows isolated from everything appended, so a single forward pass
yields both the plain predictions and the lookahead-perturbed ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

ORIGINAL, COPY, CANDIDATE = 0, 1, 2
KIND_NAMES = {ORIGINAL: "original", COPY: "copy", CANDIDATE: "candidate"}


@dataclass(frozen=True)
class CandidateSet:
    owner: int
    tokens: tuple  # ((token, prob), ...) sorted by descending prob

    @property
    def token_ids(self) -> list:
        return [t for t, _ in self.tokens]

    def __len__(self):
        return len(self.tokens)


def candidate_cap(eta: float) -> int:
    # floor(1/eta) with a guard against 1/0.1 == 9.999...
    return int(math.floor(1.0 / eta + 1e-9))


def prune_candidates(prev_dists: Mapping[int, np.ndarray], eta: float, mask_id: int) -> dict:
    """Tokens with previous-step probability >= eta, mask excluded."""
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    cap = candidate_cap(eta)
    out = {}
    for pos in sorted(prev_dists):
        p = np.asarray(prev_dists[pos], dtype=np.float64)
        keep = np.flatnonzero(p >= eta)
        keep = keep[keep != mask_id]
        # descending probability, ties to the smaller token id
        order = sorted(keep.tolist(), key=lambda t: (-p[t], t))[:cap]
        out[pos] = CandidateSet(pos, tuple((int(t), float(p[t])) for t in order))
    return out


@dataclass
class SuperposedLayout:
    kinds: np.ndarray
    position_ids: np.ndarray
    tokens: np.ndarray
    owners: np.ndarray  # -1 for original rows
    original_len: int
    mask_id: int
    copy_row: dict = field(default_factory=dict)
    candidate_rows: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.tokens.shape[0])

    @property
    def owners_in_order(self) -> list:
        return sorted(self.copy_row)

    def rows(self):
        """(kind name, position id, token, owner or None) per row."""
        for k, p, t, o in zip(self.kinds, self.position_ids, self.tokens, self.owners):
            yield KIND_NAMES[int(k)], int(p), int(t), (None if o < 0 else int(o))


def build_layout(state, candidate_sets: Mapping[int, CandidateSet]) -> SuperposedLayout:
    L = len(state.tokens)
    kinds = [ORIGINAL] * L
    pos = list(range(L))
    toks = list(state.tokens)
    owners = [-1] * L
    copy_row, cand_rows = {}, {}
    for i in sorted(candidate_sets):
        if i not in state.masked:
            raise ValueError(f"candidate owner {i} is not masked")
        copy_row[i] = len(toks)
        kinds.append(COPY)
        pos.append(i)
        toks.append(state.mask_id)
        owners.append(i)
        rows = []
        for t in candidate_sets[i].token_ids:
            rows.append(len(toks))
            kinds.append(CANDIDATE)
            pos.append(i)
            toks.append(t)
            owners.append(i)
        cand_rows[i] = rows
    return SuperposedLayout(
        np.array(kinds, dtype=np.int8),
        np.array(pos, dtype=np.int64),
        np.array(toks, dtype=np.int64),
        np.array(owners, dtype=np.int64),
        L,
        state.mask_id,
        copy_row,
        cand_rows,
    )


def build_visibility(layout: SuperposedLayout, mode: str = "augment") -> np.ndarray:
    """Boolean (R, R) mask; entry (q, k) means row q may attend to row k.

    Original rows see only original rows. An "owned" original row is a
    masked position that has a copy appended; appended rows never see owned
    rows, because the copy (and, in ``replace``, the candidates) stand in
    for them. Masks outside the active block stay visible.

    * copy of i, ``augment``: unowned originals, every copy row, and the
      candidate rows of other owners.
    * copy of i, ``replace``: unowned originals, itself, and the candidate
      rows of other owners.
    * candidate rows: all originals (``augment``) or unowned originals
      (``replace``), plus themselves.
    """
    if mode not in ("augment", "replace"):
        raise ValueError(f"unknown visibility mode {mode!r}")
    R = len(layout)
    L = layout.original_len
    kinds = layout.kinds
    owners = layout.owners
    vis = np.zeros((R, R), dtype=bool)
    vis[:L, :L] = True

    orig = np.zeros(R, dtype=bool)
    orig[:L] = True
    unowned = orig.copy()
    unowned[list(layout.copy_row)] = False
    is_copy = kinds == COPY
    is_cand = kinds == CANDIDATE

    for i, c in layout.copy_row.items():
        row = unowned | (is_cand & (owners != i))
        if mode == "augment":
            row = row | is_copy
        row[c] = True
        vis[c] = row

    cand_base = orig if mode == "augment" else unowned
    for rows in layout.candidate_rows.values():
        for r in rows:
            vis[r] = cand_base
            vis[r, r] = True
    return vis


def render_mask(mask: np.ndarray) -> str:
    """Text grid of 1/0, one line per row."""
    return "\n".join("".join("1" if v else "0" for v in row) for row in np.asarray(mask)) + "\n"


def extract(layout: SuperposedLayout, probs: np.ndarray):
    """Split a superposed forward into plain and perturbed predictions.

    Returns two dicts keyed by owner position, each mapping to
    ``(token, confidence, distribution)``.
    """
    probs = np.asarray(probs)
    if probs.shape[0] != len(layout):
        raise ValueError("output rows do not match the layout")
    orig, copy = {}, {}
    for i in layout.owners_in_order:
        po = probs[i]
        pc = probs[layout.copy_row[i]]
        to, tc = int(po.argmax()), int(pc.argmax())
        orig[i] = (to, float(po[to]), po)
        copy[i] = (tc, float(pc[tc]), pc)
    return orig, copy


def consistent_set(orig_preds: Mapping, copy_preds: Mapping, tau: float) -> set:
    """Positions whose greedy tokens agree and whose plain confidence >= tau."""
    if set(orig_preds) != set(copy_preds):
        raise ValueError("prediction maps cover different positions")
    return {
        i
        for i, (tok, conf, *_) in orig_preds.items()
        if tok == copy_preds[i][0] and conf >= tau
    }


def superposed_length(original_len: int, candidate_sets: Mapping[int, CandidateSet]) -> int:
    return original_len + sum(1 + len(cs) for cs in candidate_sets.values())
