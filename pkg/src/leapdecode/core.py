"""Shared types: vocabulary, sequence state, block schedule, config and traces."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

STRATEGIES = ("baseline", "cbpd", "leap")
VISIBILITY_MODES = ("augment", "replace")
MECHANISMS = ("threshold", "consistency", "fallback")


class LeapError(Exception):
    """Base class for all package errors."""


class FormatError(LeapError, ValueError):
    """Malformed file or record."""


class EnumerationBoundError(LeapError):
    """A brute-force enumeration would exceed its size bound."""


class DecodeComplete(LeapError):
    """Raised when asking for the active block of a fully decoded state."""


@dataclass(frozen=True)
class Vocab:
    size: int
    mask_id: int
    glyphs: Optional[tuple] = None

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary needs at least 2 entries, got {self.size}")
        if not 0 <= self.mask_id < self.size:
            raise ValueError(f"mask_id {self.mask_id} outside [0, {self.size})")
        if self.glyphs is not None and len(self.glyphs) != self.size:
            raise ValueError("glyphs must have one entry per token")

    def render(self, tokens: Iterable[int]) -> str:
        if self.glyphs is None:
            return " ".join("[M]" if t == self.mask_id else str(t) for t in tokens)
        return " ".join(self.glyphs[t] for t in tokens)


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "leap"
    phi: float = 0.9
    tau: float = 0.7
    eta: float = 0.2
    block_size: int = 32
    visibility_mode: str = "augment"
    union_cbpd: bool = False
    gen_len: int = 64
    seed: Optional[int] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.visibility_mode not in VISIBILITY_MODES:
            raise ValueError(f"unknown visibility mode {self.visibility_mode!r}")
        for name in ("phi", "tau", "eta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.gen_len < 0 or self.gen_len % self.block_size:
            raise ValueError(
                f"gen_len {self.gen_len} is not a multiple of block_size {self.block_size}"
            )

    def replace(self, **changes) -> "DecodeConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "DecodeConfig":
        """Build from string or typed values; keys that are not fields are ignored."""
        kw = {}
        for f in dataclasses.fields(cls):
            key = f.name
            if key not in values and key == "visibility_mode" and "mode" in values:
                key = "mode"
            if key not in values:
                continue
            kw[f.name] = _coerce(f.name, values[key])
        return cls(**kw)


_FIELD_TYPES = {
    "strategy": str,
    "visibility_mode": str,
    "phi": float,
    "tau": float,
    "eta": float,
    "block_size": int,
    "gen_len": int,
    "seed": int,
    "union_cbpd": bool,
}


def _coerce(name, raw):
    kind = _FIELD_TYPES[name]
    if raw is None or not isinstance(raw, str):
        return raw
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if name == "seed" and raw.strip().lower() in ("", "none"):
        return None
    return kind(raw.strip())


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def write_config_file(path, config: DecodeConfig, extra: Optional[Mapping] = None):
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if v is None:
            continue
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class SequenceState:
    """Partially denoised sequence x^t.

    ``masked`` holds the still-undecided positions; ``prev_dists`` caches
    distributions from the most recent forward pass (used by LEAP).
    """

    prompt_len: int
    tokens: list
    masked: frozenset
    mask_id: int
    block_size: int
    step: int = 0
    prev_dists: Optional[dict] = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def gen_len(self) -> int:
        return len(self.tokens) - self.prompt_len

    def check(self):
        for p, t in enumerate(self.tokens):
            if (t == self.mask_id) != (p in self.masked):
                raise AssertionError(f"mask bookkeeping broken at position {p}")
            if p < self.prompt_len and p in self.masked:
                raise AssertionError("prompt position is masked")


def new_state(prompt: Sequence[int], gen_len: int, config: DecodeConfig, vocab: Vocab) -> SequenceState:
    if gen_len % config.block_size:
        raise ValueError(f"gen_len {gen_len} is not a multiple of block size {config.block_size}")
    prompt = [int(t) for t in prompt]
    for t in prompt:
        if t == vocab.mask_id:
            raise ValueError("prompt contains the mask token")
        if not 0 <= t < vocab.size:
            raise ValueError(f"prompt token {t} outside vocabulary")
    n = len(prompt)
    return SequenceState(
        prompt_len=n,
        tokens=prompt + [vocab.mask_id] * gen_len,
        masked=frozenset(range(n, n + gen_len)),
        mask_id=vocab.mask_id,
        block_size=config.block_size,
    )


def state_from_tokens(tokens: Sequence[int], prompt_len: int, block_size: int, mask_id: int) -> SequenceState:
    """State for an arbitrary partially masked sequence (e.g. a corrupted sample)."""
    tokens = [int(t) for t in tokens]
    if (len(tokens) - prompt_len) % block_size:
        raise ValueError("generation region is not a whole number of blocks")
    if any(t == mask_id for t in tokens[:prompt_len]):
        raise ValueError("prompt contains the mask token")
    masked = frozenset(p for p in range(prompt_len, len(tokens)) if tokens[p] == mask_id)
    return SequenceState(prompt_len, tokens, masked, mask_id, block_size)


def active_block(state: SequenceState) -> range:
    """Earliest block of generation positions that still has a masked entry."""
    if not state.masked:
        raise DecodeComplete("no masked positions left")
    first = min(state.masked)
    k = (first - state.prompt_len) // state.block_size
    lo = state.prompt_len + k * state.block_size
    return range(lo, lo + state.block_size)


def active_masked(state: SequenceState) -> list:
    span = active_block(state)
    return sorted(p for p in state.masked if p in span)


def apply_decodes(state: SequenceState, events) -> SequenceState:
    """Commit ``(position, token)`` pairs and advance the step counter."""
    events = [(int(p), int(t)) for p, t, *_ in events]
    if not events:
        raise ValueError("a decoding step must commit at least one position")
    seen = set()
    tokens = list(state.tokens)
    for p, t in events:
        if p in seen:
            raise ValueError(f"position {p} decoded twice in one step")
        seen.add(p)
        if p not in state.masked:
            raise ValueError(f"position {p} is not masked")
        if t == state.mask_id:
            raise ValueError("cannot decode a position to the mask token")
        tokens[p] = t
    return dataclasses.replace(
        state,
        tokens=tokens,
        masked=state.masked - seen,
        step=state.step + 1,
    )


# ---------------------------------------------------------------- traces


@dataclass(frozen=True)
class Event:
    pos: int
    token: int
    conf: float
    mech: str


@dataclass(frozen=True)
class Snapshot:
    pos: int
    token: int
    conf: float
    probs: Optional[np.ndarray] = None


@dataclass
class StepRecord:
    step: int
    forward_len: int
    events: list
    snapshots: list = field(default_factory=list)

    def to_json(self) -> dict:
        snaps = []
        for s in self.snapshots:
            d = {"pos": s.pos, "token": s.token, "conf": s.conf}
            if s.probs is not None:
                d["probs"] = [float(x) for x in s.probs]
            snaps.append(d)
        return {
            "step": self.step,
            "forward_len": self.forward_len,
            "events": [
                {"pos": e.pos, "token": e.token, "conf": e.conf, "mech": e.mech}
                for e in self.events
            ],
            "snapshots": snaps,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "StepRecord":
        try:
            events = [
                Event(int(e["pos"]), int(e["token"]), float(e["conf"]), str(e["mech"]))
                for e in d["events"]
            ]
            snaps = [
                Snapshot(
                    int(s["pos"]),
                    int(s["token"]),
                    float(s["conf"]),
                    np.asarray(s["probs"], dtype=np.float64) if "probs" in s else None,
                )
                for s in d.get("snapshots", [])
            ]
            rec = cls(int(d["step"]), int(d["forward_len"]), events, snaps)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad trace record: {exc}") from exc
        for e in events:
            if e.mech not in MECHANISMS:
                raise FormatError(f"unknown mechanism {e.mech!r}")
        return rec


@dataclass
class DecodeTrace:
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def decoded(self) -> int:
        return sum(len(s.events) for s in self.steps)

    def events(self):
        for rec in self.steps:
            for e in rec.events:
                yield rec.step, e

    def validate(self):
        seen = set()
        for rec in self.steps:
            if not rec.events:
                raise FormatError(f"step {rec.step} decoded nothing")
            for e in rec.events:
                if e.pos in seen:
                    raise FormatError(f"position {e.pos} decoded twice")
                seen.add(e.pos)

    def dumps(self) -> str:
        return "".join(
            json.dumps(rec.to_json(), separators=(",", ":")) + "\n" for rec in self.steps
        )

    def write(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "DecodeTrace":
        steps = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"trace line {lineno}: {exc}") from exc
            steps.append(StepRecord.from_json(d))
        return cls(steps)

    @classmethod
    def read(cls, path) -> "DecodeTrace":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
