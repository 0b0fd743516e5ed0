"""Exact probabilistic testbed: a first-order Markov source.

Provides sampling, the independent-masking corruption process, closed-form
masked-position posteriors, an exhaustive-enumeration oracle, and a
denoiser adapter so the chain can stand in for a trained network.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import EnumerationBoundError, FormatError, Vocab
from .rng import SplitMix64

ENUM_BITS = 24


class ImpossibleContextError(ValueError):
    """The observed tokens have probability zero under the source."""


@dataclass(frozen=True)
class MarkovSpec:
    vocab_size: int
    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        init = np.asarray(self.initial, dtype=np.float64)
        trans = np.asarray(self.transition, dtype=np.float64)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "transition", trans)
        V = self.vocab_size
        if V < 1:
            raise ValueError("vocab_size must be positive")
        if init.shape != (V,) or trans.shape != (V, V):
            raise ValueError("initial / transition shapes do not match vocab_size")
        if (init < 0).any() or (trans < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(init.sum() - 1.0) > 1e-9:
            raise ValueError("initial distribution does not sum to 1")
        if np.abs(trans.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("transition rows do not sum to 1")

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    def vocab(self) -> Vocab:
        return Vocab(self.vocab_size + 1, self.vocab_size)

    def sequence_prob(self, seq: Sequence[int]) -> float:
        p = self.initial[seq[0]]
        for a, b in zip(seq, seq[1:]):
            p *= self.transition[a, b]
        return float(p)

    def to_json(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
        }


@dataclass(frozen=True)
class NoisyCopySpec:
    """Long-range source: x[k] ~ (1-c) * P[x[k-1], .] + c * onehot(x[0]).

    Not Markov in the chain sense; only the brute-force oracle handles it.
    """

    vocab_size: int
    initial: np.ndarray
    transition: np.ndarray
    copy_prob: float

    def __post_init__(self):
        MarkovSpec(self.vocab_size, self.initial, self.transition)
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=np.float64))
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=np.float64))
        if not 0.0 <= self.copy_prob <= 1.0:
            raise ValueError("copy_prob must lie in [0, 1]")

    @property
    def mask_id(self) -> int:
        return self.vocab_size

    def sequence_prob(self, seq: Sequence[int]) -> float:
        c = self.copy_prob
        p = self.initial[seq[0]]
        for a, b in zip(seq, seq[1:]):
            p *= (1.0 - c) * self.transition[a, b] + c * (b == seq[0])
        return float(p)


def load_spec(path):
    """Load a Markov (or noisy-copy) spec from JSON, validating invariants."""
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    try:
        kind = d.get("kind", "markov")
        args = (int(d["vocab_size"]), d["initial"], d["transition"])
        if kind == "markov":
            return MarkovSpec(*args)
        if kind == "noisy-copy":
            return NoisyCopySpec(*args, float(d["copy_prob"]))
        raise FormatError(f"{path}: unknown spec kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_spec(spec: MarkovSpec, path):
    Path(path).write_text(json.dumps(spec.to_json(), indent=2) + "\n", encoding="utf-8")


def sample_sequence(spec: MarkovSpec, length: int, seed: int) -> list:
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = SplitMix64(seed)
    x = [rng.categorical(spec.initial)]
    for _ in range(length - 1):
        x.append(rng.categorical(spec.transition[x[-1]]))
    return x


def corrupt(x0: Sequence[int], alpha_t: float, seed: int, mask_id: int) -> list:
    """Keep each token with probability ``alpha_t``, otherwise mask it."""
    if not 0.0 <= alpha_t <= 1.0:
        raise ValueError("alpha_t must lie in [0, 1]")
    u = SplitMix64(seed).uniform(len(x0))
    return [int(t) if u[k] < alpha_t else mask_id for k, t in enumerate(x0)]


def _obs(context, mask_id):
    return np.array([-1 if t == mask_id else t for t in context], dtype=np.int64)


def exact_conditional(spec: MarkovSpec, context: Sequence[int], mask_id: Optional[int] = None) -> dict:
    """Posterior over each masked position given all observed tokens.

    Equivalent to normalising (P^dl)[a, v] * (P^dr)[v, b] between the
    nearest observations a (left) and b (right); evaluated as a
    normalised forward-backward sweep.
    """
    if len(context) < 1:
        raise ValueError("empty context")
    mask_id = spec.mask_id if mask_id is None else mask_id
    obs = _obs(context, mask_id)
    try:
        post = _kernels.chain_posteriors(spec.initial, spec.transition, obs)
    except ValueError as exc:
        raise ImpossibleContextError(str(exc)) from exc
    return {int(p): post[p] for p in np.flatnonzero(obs < 0)}


def brute_force_conditional(spec, context: Sequence[int], mask_id: Optional[int] = None) -> dict:
    """Marginals by enumerating every completion of the masked positions.

    Works for any source exposing ``sequence_prob``.
    """
    mask_id = spec.mask_id if mask_id is None else mask_id
    V = spec.vocab_size
    holes = [p for p, t in enumerate(context) if t == mask_id]
    if not holes:
        return {}
    if V > 1 and len(holes) * math.log2(V) > ENUM_BITS:
        raise EnumerationBoundError(f"{V}^{len(holes)} completions exceed 2^{ENUM_BITS}")
    marg = np.zeros((len(holes), V))
    seq = list(context)
    for fill in itertools.product(range(V), repeat=len(holes)):
        for p, v in zip(holes, fill):
            seq[p] = v
        w = spec.sequence_prob(seq)
        if w:
            for k, v in enumerate(fill):
                marg[k, v] += w
    z = marg[0].sum()
    if z <= 0:
        raise ImpossibleContextError("evidence has zero probability under the source")
    return {p: marg[k] / z for k, p in enumerate(holes)}


class MarkovDenoiser:
    """The exact chain posterior used as a denoiser p(x_i | context).

    Rows for observed positions are one-hot; the mask token gets zero mass.
    """

    supports_superposition = False

    def __init__(self, spec: MarkovSpec):
        self.spec = spec
        self.vocab = spec.vocab()
        self._powers = [np.eye(spec.vocab_size)]
        self._marginals = [spec.initial.copy()]

    def predict(self, tokens) -> np.ndarray:
        V = self.spec.vocab_size
        obs = _obs(tokens, self.vocab.mask_id)
        try:
            post = _kernels.chain_posteriors(self.spec.initial, self.spec.transition, obs)
        except ValueError as exc:
            raise ImpossibleContextError(str(exc)) from exc
        out = np.zeros((len(tokens), V + 1))
        out[:, :V] = post
        return out

    def _power(self, d: int) -> np.ndarray:
        while len(self._powers) <= d:
            self._powers.append(self._powers[-1] @ self.spec.transition)
        return self._powers[d]

    def _marginal(self, k: int) -> np.ndarray:
        while len(self._marginals) <= k:
            self._marginals.append(self._marginals[-1] @ self.spec.transition)
        return self._marginals[k]

    def lookahead_converged(self, tokens, i: int, candidate_sets: dict) -> bool:
        """Exact one-step-future invariance check for position ``i``.

        Under a first-order chain the posterior at ``i`` depends only on the
        nearest observed token on each side, so enumerating the nearest
        filled candidate per side covers every joint assignment of the
        other positions' candidates.
        """
        mask_id = self.vocab.mask_id
        n = len(tokens)

        lo = i - 1
        while lo >= 0 and tokens[lo] == mask_id:
            lo -= 1
        left = [self._marginal(i) if lo < 0 else self._power(i - lo)[tokens[lo]]]
        for j in range(lo + 1, i):
            cs = candidate_sets.get(j)
            if cs is not None:
                left.extend(self._power(i - j)[tok] for tok in cs.token_ids)

        hi = i + 1
        while hi < n and tokens[hi] == mask_id:
            hi += 1
        right = [np.ones(self.spec.vocab_size) if hi >= n else self._power(hi - i)[:, tokens[hi]]]
        for j in range(i + 1, hi):
            cs = candidate_sets.get(j)
            if cs is not None:
                right.extend(self._power(j - i)[:, tok] for tok in cs.token_ids)

        base = left[0] * right[0]
        if base.sum() <= 0:
            raise ImpossibleContextError("evidence has zero probability under the chain")
        return _kernels.lookahead_agrees(np.array(left), np.array(right), int(base.argmax()))
