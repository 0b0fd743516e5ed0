"""Metrics, corpus evaluation and threshold sweeps."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import _csv_text
from .core import DecodeConfig, DecodeTrace, state_from_tokens
from .decoding import run_decode
from .exactmodel import MarkovDenoiser, MarkovSpec, corrupt, sample_sequence
from .rng import derive_seed


@dataclass
class MetricsReport:
    strategy: str
    steps: int
    decoded: int
    tpf: float
    tfops: int
    forward_lens: list
    wall_time: Optional[float] = None
    speedup_steps: Optional[float] = None
    speedup_wall: Optional[float] = None
    normalized_tfops: Optional[float] = None

    FIELDS = (
        "strategy", "steps", "decoded", "tpf", "tfops", "wall_time",
        "speedup_steps", "speedup_wall", "normalized_tfops",
    )

    def to_csv(self) -> str:
        return _csv_text(list(self.FIELDS), [[getattr(self, f) for f in self.FIELDS]])

    def series_csv(self) -> str:
        return _csv_text(["step", "forward_len"], [[k + 1, n] for k, n in enumerate(self.forward_lens)])


def compute_metrics(
    trace: DecodeTrace,
    baseline: Optional[DecodeTrace] = None,
    *,
    strategy: str = "",
    wall_time: Optional[float] = None,
    baseline_wall: Optional[float] = None,
) -> MetricsReport:
    lens = [rec.forward_len for rec in trace.steps]
    steps = len(lens)
    decoded = trace.decoded
    rep = MetricsReport(
        strategy=strategy,
        steps=steps,
        decoded=decoded,
        tpf=decoded / steps if steps else 0.0,
        tfops=int(sum(lens)),
        forward_lens=lens,
        wall_time=wall_time,
    )
    if baseline is not None:
        if baseline.decoded != decoded:
            raise ValueError(
                f"baseline decoded {baseline.decoded} tokens but this run decoded {decoded}"
            )
        b_tfops = sum(rec.forward_len for rec in baseline.steps)
        if steps:
            rep.speedup_steps = baseline.n_steps / steps
        if b_tfops:
            rep.normalized_tfops = rep.tfops / b_tfops
        if wall_time and baseline_wall:
            rep.speedup_wall = baseline_wall / wall_time
    return rep


# ---------------------------------------------------------------- corpora


@dataclass
class ItemResult:
    index: int
    steps: int
    decoded: int
    recovered: int
    tfops: int
    exact_match: bool
    wall_time: float


@dataclass
class CorpusReport:
    strategy: str
    items: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.items)

    @property
    def mean_steps(self) -> float:
        return float(np.mean([it.steps for it in self.items]))

    @property
    def recovery(self) -> Optional[float]:
        dec = sum(it.decoded for it in self.items)
        if any(it.recovered is None for it in self.items):
            return None
        return 1.0 if dec == 0 else sum(it.recovered for it in self.items) / dec

    @property
    def exact_match(self) -> Optional[float]:
        if any(it.exact_match is None for it in self.items):
            return None
        return float(np.mean([it.exact_match for it in self.items]))

    @property
    def mean_tpf(self) -> Optional[float]:
        vals = [it.decoded / it.steps for it in self.items if it.steps]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_tfops(self) -> float:
        return float(np.mean([it.tfops for it in self.items]))

    def normalized_tfops(self, reference: "CorpusReport") -> Optional[float]:
        """Mean per-item TFOPs ratio against ``reference`` on the same corpus."""
        ratios = [a.tfops / b.tfops for a, b in zip(self.items, reference.items) if b.tfops]
        return float(np.mean(ratios)) if ratios else None

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "n": self.n,
            "mean_steps": self.mean_steps,
            "recovery": self.recovery,
            "exact_match": self.exact_match,
            "mean_tpf": self.mean_tpf,
            "mean_tfops": self.mean_tfops,
        }


def strategy_label(model, config: DecodeConfig) -> str:
    if config.strategy == "leap" and not getattr(model, "supports_superposition", False):
        return "leap-exact"
    return config.strategy


def sample_corpus(spec: MarkovSpec, n: int, length: int, seed: int) -> list:
    return [sample_sequence(spec, length, derive_seed(seed, k, 0)) for k in range(n)]


def evaluate_corpus(
    model: MarkovDenoiser,
    spec: MarkovSpec,
    n: int,
    length: int,
    alpha_t: float,
    config: DecodeConfig,
    *,
    prompt_len: int = 2,
    seed: Optional[int] = None,
) -> CorpusReport:
    """Sample, corrupt and decode ``n`` sequences; score against the samples.

    Each item is ``prompt_len`` clean tokens followed by ``length``
    generation positions corrupted at keep-rate ``alpha_t``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = config.seed if seed is None else seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    if length % config.block_size:
        raise ValueError("length must be a multiple of block_size")
    report = CorpusReport(strategy_label(model, config))
    mask_id = model.vocab.mask_id
    for k in range(n):
        x0 = sample_sequence(spec, prompt_len + length, derive_seed(seed, k, 0))
        gen = corrupt(x0[prompt_len:], alpha_t, derive_seed(seed, k, 1), mask_id)
        state = state_from_tokens(x0[:prompt_len] + gen, prompt_len, config.block_size, mask_id)
        masked = sorted(state.masked)
        t0 = time.perf_counter()
        tokens, trace = run_decode(model, None, config, state=state, snapshots=False)
        wall = time.perf_counter() - t0
        report.items.append(
            ItemResult(
                index=k,
                steps=trace.n_steps,
                decoded=trace.decoded,
                recovered=sum(tokens[p] == x0[p] for p in masked),
                tfops=sum(r.forward_len for r in trace.steps),
                exact_match=tokens == x0,
                wall_time=wall,
            )
        )
    return report


def evaluate_prompts(model, prompts: Sequence, config: DecodeConfig) -> CorpusReport:
    """Decode each prompt; no ground truth, so recovery is absent."""
    report = CorpusReport(strategy_label(model, config))
    for k, prompt in enumerate(prompts):
        t0 = time.perf_counter()
        _, trace = run_decode(model, prompt, config, snapshots=False)
        report.items.append(
            ItemResult(
                k, trace.n_steps, trace.decoded, None,
                sum(r.forward_len for r in trace.steps), None, time.perf_counter() - t0,
            )
        )
    return report


# ---------------------------------------------------------------- sweeps


def sweep_values(lo: float, hi: float, step: float) -> list:
    if step <= 0:
        raise ValueError("step must be positive")
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + k * step, 10) for k in range(n)]


SWEEP_HEADER = ["param", "value", "accuracy", "mean_steps", "mean_tpf", "mean_norm_tfops"]


def sweep(param: str, lo: float, hi: float, step: float, config: DecodeConfig, evaluate) -> list:
    """One row per parameter value.

    ``evaluate(config) -> CorpusReport`` runs the corpus; TFOPs are
    normalised per item against CBPD at the fixed config's ``phi``.
    """
    if param not in ("tau", "eta", "phi"):
        raise ValueError(f"cannot sweep {param!r}")
    reference = evaluate(config.replace(strategy="cbpd"))
    if reference.n == 0:
        raise ValueError("empty corpus")
    rows = []
    for v in sweep_values(lo, hi, step):
        rep = evaluate(config.replace(**{param: v}))
        rows.append([param, v, rep.recovery, rep.mean_steps, rep.mean_tpf, rep.normalized_tfops(reference)])
    return rows


def sweep_csv(rows) -> str:
    return _csv_text(SWEEP_HEADER, rows)
