"""Continuous block: multivariate Gaussian with CMA-style adaptation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from catcma.hyperparams import Hyperparameters

_EIG_FLOOR = 1e-300
# largest factor by which sigma may change in one update
_SIGMA_LOG_CAP = math.log(1e10)


class StateCorruptionError(RuntimeError):
    """Raised when a distribution parameter is no longer numerically valid."""


@dataclass
class GaussianState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    path_sigma: np.ndarray
    path_cov: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, mean, sigma: float = 1.0, cov: Optional[np.ndarray] = None) -> "GaussianState":
        mean = np.array(mean, dtype=float)
        n = len(mean)
        cov = np.eye(n) if cov is None else np.array(cov, dtype=float)
        if cov.shape != (n, n):
            raise ValueError(f"cov must have shape ({n}, {n}), got {cov.shape}")
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        state = cls(mean, float(sigma), cov, np.zeros(n), np.zeros(n), 0)
        check_gaussian_state(state)
        return state

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass
class RankedSteps:
    """Steps y sorted by ascending fitness, with their recombination weights."""

    steps: np.ndarray  # (lam, n)
    weights: np.ndarray  # (lam,)

    @property
    def weighted_step(self) -> np.ndarray:
        return self.weights @ self.steps


def sym_eigh(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the symmetric part of ``mat``."""
    sym = (mat + mat.T) / 2
    if not np.all(np.isfinite(sym)):
        raise StateCorruptionError("matrix has non-finite entries")
    return np.linalg.eigh(sym)


def inv_sqrt(cov: np.ndarray) -> np.ndarray:
    """C^{-1/2} by symmetric eigendecomposition; eigenvalues floored at 1e-300."""
    eig, basis = sym_eigh(cov)
    return (basis / np.sqrt(np.maximum(eig, _EIG_FLOOR))) @ basis.T


def sqrt_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    eig, basis = sym_eigh(cov)
    if eig[0] < -1e-8 * max(abs(eig[-1]), _EIG_FLOOR):
        raise StateCorruptionError(f"covariance is not positive semi-definite (min eig {eig[0]:.3e})")
    return (basis * np.sqrt(np.maximum(eig, 0.0))) @ basis.T


def sample_continuous(state: GaussianState, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` steps y ~ N(0, C) and the matching points x = m + sigma*y."""
    z = rng.standard_normal((count, state.dim))
    ys = z @ sqrt_factor(state.cov)
    xs = state.mean + state.sigma * ys
    return ys, xs


def update_mean(state: GaussianState, ranked: RankedSteps, hp: Hyperparameters) -> np.ndarray:
    return state.mean + hp.c_m * state.sigma * ranked.weighted_step


def expected_norm(n: int) -> float:
    """Approximation of E||N(0, I_n)||."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))


def update_evolution_paths(
    state: GaussianState,
    ranked: RankedSteps,
    hp: Hyperparameters,
    cov_inv_sqrt: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Cumulate the weighted step into p_sigma and p_c.

    Returns ``(path_sigma, path_cov, h_sigma)``.
    """
    n = state.dim
    if cov_inv_sqrt is None:
        cov_inv_sqrt = inv_sqrt(state.cov)
    y_w = ranked.weighted_step
    c_s, c_c = hp.c_sigma, hp.c_c

    ps = (1 - c_s) * state.path_sigma + math.sqrt(c_s * (2 - c_s) * hp.mu_eff) * (cov_inv_sqrt @ y_w)
    threshold = math.sqrt(1 - (1 - c_s) ** (2 * (state.iteration + 1))) * (1.4 + 2 / (n + 1)) * expected_norm(n)
    h_sigma = 1.0 if np.linalg.norm(ps) < threshold else 0.0
    pc = (1 - c_c) * state.path_cov + h_sigma * math.sqrt(c_c * (2 - c_c) * hp.mu_eff) * y_w

    if not (np.all(np.isfinite(ps)) and np.all(np.isfinite(pc))):
        raise StateCorruptionError("evolution path became non-finite")
    return ps, pc, h_sigma


def update_covariance(
    state: GaussianState,
    ranked: RankedSteps,
    path_cov: np.ndarray,
    h_sigma: float,
    hp: Hyperparameters,
) -> np.ndarray:
    cov = state.cov
    c_1, c_mu = hp.c_1, hp.c_mu
    ys, w = ranked.steps, ranked.weights
    rank_mu = (ys.T * w) @ ys - w.sum() * cov
    rank_one = np.outer(path_cov, path_cov) - cov
    stall = 1 + (1 - h_sigma) * c_1 * hp.c_c * (2 - hp.c_c)
    new = stall * cov + c_1 * rank_one + c_mu * rank_mu
    return (new + new.T) / 2


def update_step_size(state: GaussianState, path_sigma: np.ndarray, hp: Hyperparameters) -> float:
    ratio = np.linalg.norm(path_sigma) / expected_norm(state.dim)
    exponent = (hp.c_sigma / hp.d_sigma) * (ratio - 1)
    exponent = min(max(exponent, -_SIGMA_LOG_CAP), _SIGMA_LOG_CAP)
    return state.sigma * math.exp(exponent)


def clamp_step_size(state: GaussianState, lambda_min_eig: float = 1e-30) -> float:
    """Raise sigma so that every eigenvalue of sigma^2 * C is at least ``lambda_min_eig``."""
    min_eig = float(np.linalg.eigvalsh((state.cov + state.cov.T) / 2)[0])
    floor = math.sqrt(lambda_min_eig / max(min_eig, _EIG_FLOOR))
    return max(state.sigma, floor)


def check_gaussian_state(state: GaussianState) -> None:
    """Raise ``StateCorruptionError`` unless ``state`` satisfies its invariants."""
    cov = state.cov
    if not (np.all(np.isfinite(state.mean)) and np.all(np.isfinite(cov)) and math.isfinite(state.sigma)):
        raise StateCorruptionError("Gaussian state has non-finite entries")
    if not state.sigma > 0:
        raise StateCorruptionError(f"sigma must be positive, got {state.sigma}")
    if state.dim == 0:
        return
    scale = max(float(np.max(np.abs(cov))), _EIG_FLOOR)
    if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
        raise StateCorruptionError("covariance is not symmetric")
    if np.linalg.eigvalsh(cov)[0] <= 0:
        raise StateCorruptionError("covariance is not positive definite")

