"""Categorical block: ASNG-style natural gradient on one-hot distributions.

Per-variable parameters are stored in a zero-padded ``(n_ca, k_max)`` array so
that variables with different numbers of categories share vectorised code.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from catcma.gaussian import StateCorruptionError
from catcma.hyperparams import Hyperparameters


@functools.lru_cache(maxsize=64)
def _layout(categories: tuple[int, ...]):
    """Masks and per-K groupings for a given category structure."""
    k = np.asarray(categories)
    k_max = int(k.max())
    cols = np.arange(k_max)
    valid = cols[None, :] < k[:, None]
    inner = cols[None, :] < (k - 1)[:, None]
    offsets = np.concatenate([[0], np.cumsum(k - 1)])
    groups = []
    for kn in sorted(set(categories)):
        rows = np.flatnonzero(k == kn)
        groups.append((kn, rows))
    return valid, inner, offsets, groups


@dataclass
class CategoricalState:
    q: np.ndarray  # (n_ca, k_max), zero beyond each variable's K_n
    categories: tuple[int, ...]
    s: np.ndarray
    gamma: float = 0.0
    delta: float = 1.0

    @classmethod
    def initial(cls, categories: Sequence[int], q=None) -> "CategoricalState":
        categories = tuple(int(k) for k in categories)
        valid = _layout(categories)[0]
        if q is None:
            q = valid / np.asarray(categories, dtype=float)[:, None]
        else:
            q = pad_blocks(q, categories)
        state = cls(q, categories, np.zeros(sum(k - 1 for k in categories)), 0.0, 1.0)
        check_simplex(state.q, categories)
        return state

    @property
    def n_free_params(self) -> int:
        return len(self.s)

    def blocks(self) -> list[np.ndarray]:
        return [self.q[n, :k].copy() for n, k in enumerate(self.categories)]


def pad_blocks(blocks, categories: Sequence[int]) -> np.ndarray:
    """Convert a list of per-variable vectors (or a padded array) to padded form."""
    categories = tuple(categories)
    out = np.zeros((len(categories), max(categories)))
    if len(blocks) != len(categories):
        raise ValueError(f"expected {len(categories)} blocks, got {len(blocks)}")
    for n, (block, k) in enumerate(zip(blocks, categories)):
        block = np.asarray(block, dtype=float)
        if np.any(block[k:] != 0) or len(block[:k]) != k:
            raise ValueError(f"block {n} does not have {k} categories")
        out[n, :k] = block[:k]
    return out


def check_simplex(q: np.ndarray, categories: Sequence[int], margins=None, tol: float = 1e-12) -> None:
    valid = _layout(tuple(categories))[0]
    if q.shape != valid.shape:
        raise StateCorruptionError(f"categorical parameters have shape {q.shape}, expected {valid.shape}")
    if not np.all(np.isfinite(q)) or np.any(q[~valid] != 0):
        raise StateCorruptionError("categorical parameters are non-finite or badly padded")
    if np.any(q < 0) or np.any(q > 1):
        raise StateCorruptionError("categorical parameters must lie in [0, 1]")
    if np.any(np.abs(q.sum(axis=1) - 1) > tol):
        raise StateCorruptionError("categorical parameters do not sum to 1")
    if margins is not None:
        below = np.where(valid, q, np.inf) < np.asarray(margins)[:, None]
        if np.any(below):
            raise StateCorruptionError("categorical parameter fell below its margin")


def sample_categorical(state: CategoricalState, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` one-hot samples, shape ``(count, n_ca, k_max)``."""
    _, inner, _, _ = _layout(state.categories)
    u = rng.random((count, len(state.categories), 1))
    cum = np.cumsum(state.q, axis=1)
    index = np.sum((u >= cum) & inner, axis=-1)
    return (np.arange(state.q.shape[1]) == index[..., None]).astype(float)


def estimated_natural_gradient(q: np.ndarray, onehots: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of (c_i - q) over ranked one-hot samples."""
    return np.tensordot(weights, onehots, axes=1) - weights.sum() * q


def fisher_norm(q: np.ndarray, grad: np.ndarray, categories: Sequence[int]) -> float:
    """Fisher norm of a zero-sum gradient: sqrt(sum G^2 / q)."""
    valid = _layout(tuple(categories))[0]
    safe_q = np.where(valid, q, 1.0)
    return math.sqrt(float(np.sum(np.where(valid, grad * grad / safe_q, 0.0))))


def sqrt_fisher_apply(q: np.ndarray, grad: np.ndarray, categories: Sequence[int]) -> np.ndarray:
    """Apply the symmetric square root of the reduced Fisher matrix, block by block.

    Each gradient block loses its last component; the result has length
    sum(K_n - 1).
    """
    _, _, offsets, groups = _layout(tuple(categories))
    out = np.empty(offsets[-1])
    for k, rows in groups:
        head = q[rows, : k - 1]
        tail = q[rows, k - 1]
        fisher = np.ones((len(rows), k - 1, k - 1)) / tail[:, None, None]
        diag = np.arange(k - 1)
        fisher[:, diag, diag] += 1 / head
        eig, basis = np.linalg.eigh(fisher)
        if np.any(eig <= 0) or not np.all(np.isfinite(eig)):
            raise StateCorruptionError("Fisher block is not positive definite")
        g = grad[rows, : k - 1]
        coords = np.einsum("bji,bj->bi", basis, g) * np.sqrt(eig)
        applied = np.einsum("bij,bj->bi", basis, coords)
        for row, vec in zip(rows, applied):
            out[offsets[row] : offsets[row + 1]] = vec
    return out


def asng_update(
    state: CategoricalState,
    grad: np.ndarray,
    hp: Hyperparameters,
    normalize_accumulation: bool = True,
    delta_max: Optional[float] = None,
) -> CategoricalState:
    """Trust-region natural-gradient step on q with SNR-driven radius adaptation.

    Returns the new state before margin correction. A zero gradient skips the
    update entirely.

    With ``normalize_accumulation`` (the default) the accumulators track the
    unit-Fisher-norm direction G/||G||_F, so gamma tends to 1 and the radius
    settles where beta stays below 1. Passing ``False`` accumulates the raw
    F^{1/2} G and ||G||_F^2; that form lets one large gradient push beta past
    2 and is kept only for comparison.

    ``delta_max`` defaults to sqrt(sum(K_n - 1)), i.e. beta <= 1. Without a
    cap, a categorical variable the objective ignores drifts to its margin
    and keeps producing the same gradient sign, so delta grows until beta
    reaches 2 and the update is undefined. Pass ``math.inf`` to disable.
    """
    norm = fisher_norm(state.q, grad, state.categories)
    if norm == 0.0:
        return CategoricalState(state.q.copy(), state.categories, state.s.copy(), state.gamma, state.delta)

    n_free = state.n_free_params
    beta = state.delta / math.sqrt(n_free)
    if beta >= 2:
        raise StateCorruptionError(f"trust-region radius {state.delta:.3g} gives beta >= 2")
    q = state.q + state.delta * grad / norm
    direction = sqrt_fisher_apply(state.q, grad, state.categories)
    signal = norm**2
    if normalize_accumulation:
        direction = direction / norm
        signal = 1.0
    s = (1 - beta) * state.s + math.sqrt(beta * (2 - beta)) * direction
    gamma = (1 - beta) ** 2 * state.gamma + beta * (2 - beta) * signal
    delta = state.delta * math.exp(min(beta * (float(s @ s) / hp.alpha - gamma), 700.0))

    if not (delta > 0 and not math.isnan(delta)):
        raise StateCorruptionError(f"trust-region radius became invalid: {delta}")
    if delta > math.sqrt(n_free):
        warnings.warn(
            "trust-region radius exceeds sqrt(sum(K_n - 1)); beta > 1 unless capped",
            RuntimeWarning,
            stacklevel=2,
        )
    cap = math.sqrt(n_free) if delta_max is None else delta_max
    delta = min(delta, cap)
    if not math.isfinite(delta):
        raise StateCorruptionError(f"trust-region radius became invalid: {delta}")
    return CategoricalState(q, state.categories, s, gamma, delta)


def igo_q_update(q: np.ndarray, grad: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Plain IGO step q + eta_n * G_n with a fixed rate per variable."""
    return q + np.asarray(eta)[:, None] * grad


def margin_correction(q: np.ndarray, margins: np.ndarray, categories: Sequence[int]) -> np.ndarray:
    """Lift every probability to at least its margin and renormalise.

    Entries are clamped to ``margins[n]`` and the excess above the margin is
    rescaled so each variable sums to one.
    """
    valid = _layout(tuple(categories))[0]
    k = np.asarray(categories, dtype=float)
    qmin = np.asarray(margins, dtype=float)[:, None]
    clamped = np.where(valid, np.maximum(q, qmin), 0.0)
    excess = np.where(valid, clamped - qmin, 0.0)
    room = excess.sum(axis=1, keepdims=True)
    degenerate = room[:, 0] <= 0
    room[degenerate] = 1.0
    # qmin + excess*(1 - K qmin)/room equals the additive form and stays >= qmin
    scale = (1 - k[:, None] * qmin) / room
    out = np.where(valid, qmin + excess * scale, 0.0)
    if np.any(degenerate):
        out[degenerate] = valid[degenerate] / k[degenerate, None]
    return out
