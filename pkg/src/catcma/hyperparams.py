"""Problem dimensions, default hyperparameters and margin settings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

# success-probability constant behind the recommended margin
XI = 0.27


@dataclass(frozen=True)
class ProblemDims:
    """Shape of a mixed continuous/categorical search space.

    ``categories[n]`` is the number of categories of the n-th categorical
    variable; ``n_ca`` is derived from its length.
    """

    n_co: int
    categories: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(int(k) for k in self.categories))
        if self.n_co < 0:
            raise ValueError(f"n_co must be >= 0, got {self.n_co}")
        if self.n_ca < 1:
            raise ValueError("at least one categorical variable is required")
        bad = [k for k in self.categories if k < 2]
        if bad:
            raise ValueError(f"every categorical variable needs >= 2 categories, got {bad}")

    @classmethod
    def uniform(cls, n_co: int, n_ca: int, k: int) -> "ProblemDims":
        return cls(n_co, (k,) * n_ca)

    @property
    def n_ca(self) -> int:
        return len(self.categories)

    @property
    def k_max(self) -> int:
        return max(self.categories)

    @property
    def n_free_params(self) -> int:
        """Sum of (K_n - 1): the number of free categorical parameters."""
        return sum(k - 1 for k in self.categories)


@dataclass(frozen=True)
class Hyperparameters:
    lam: int
    mu: int
    weights: np.ndarray  # w_i / lambda, length lam, zero beyond mu
    mu_eff: float
    c_m: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    alpha: float
    lambda_min_eig: float
    margins: np.ndarray  # q^min per categorical variable


def recommended_margin(n_ca: int, k_n: int) -> float:
    """Margin that keeps P(sample has a non-optimal category) at ``XI``."""
    if n_ca < 1:
        raise ValueError(f"n_ca must be >= 1, got {n_ca}")
    if k_n < 2:
        raise ValueError(f"k_n must be >= 2, got {k_n}")
    return (1.0 - (1.0 - XI) ** (1.0 / n_ca)) / (k_n - 1)


MarginKind = Union[str, float]


def margin_variant(kind: MarginKind, dims: ProblemDims, lam: int) -> np.ndarray:
    """Per-variable margins for a named setting or an explicit float.

    ``"small"`` is 1/(lam*N_ca*(K-1)); ``"small-alt"`` is the variant
    1/(N_ca*(lam*K-1)).
    """
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    n_ca = dims.n_ca
    k = np.asarray(dims.categories, dtype=float)
    named = {
        "large": lambda: 1.0 / (n_ca * (k - 1)),
        "small": lambda: 1.0 / (lam * n_ca * (k - 1)),
        "small-alt": lambda: 1.0 / (n_ca * (lam * k - 1)),
        "recommended": lambda: np.array([recommended_margin(n_ca, int(kn)) for kn in dims.categories]),
    }
    if isinstance(kind, str):
        if kind in named:
            margins = named[kind]()
            # the large setting reaches 1/K_n when n_ca == 1
            if np.any(margins >= 1.0 / k):
                raise ValueError(f"{kind} margin is not below 1/K_n for these dims")
            return margins
        try:
            kind = float(kind)
        except ValueError:
            raise ValueError(f"unknown margin setting {kind!r}") from None
    value = float(kind)
    if not np.all((value > 0) & (value < 1.0 / k)):
        raise ValueError(f"explicit margin {value} must lie in (0, 1/K_n) for every variable")
    return np.full(n_ca, value)


def default_hyperparameters(dims: ProblemDims, margin: MarginKind = "recommended") -> Hyperparameters:
    n_total = dims.n_co + dims.n_ca
    if n_total <= 0:
        raise ValueError("n_co + n_ca must be positive")
    lam = 4 + math.floor(3 * math.log(n_total))
    mu = lam // 2

    raw = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    weights = np.zeros(lam)
    weights[:mu] = raw / raw.sum()
    mu_eff = 1.0 / float(np.sum(weights[:mu] ** 2))

    # the continuous rates divide by N_co; a pure categorical problem never uses them
    n = max(dims.n_co, 1)
    c_sigma = (mu_eff + 2) / (dims.n_co + mu_eff + 5)
    d_sigma = 1 + c_sigma + 2 * max(0.0, math.sqrt((mu_eff - 1) / (dims.n_co + 1)) - 1)
    c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((dims.n_co + 2) ** 2 + mu_eff))

    return Hyperparameters(
        lam=lam,
        mu=mu,
        weights=weights,
        mu_eff=mu_eff,
        c_m=1.0,
        c_sigma=c_sigma,
        d_sigma=d_sigma,
        c_c=c_c,
        c_1=c_1,
        c_mu=c_mu,
        alpha=1.5,
        lambda_min_eig=1e-30,
        margins=margin_variant(margin, dims, lam),
    )


def _log_binom_pmf(n: int, k: int, p: float) -> float:
    log_coef = math.log(math.comb(n, k))
    return log_coef + k * math.log(p) + (n - k) * math.log1p(-p)


def binomial_tail_probability(lam: int, xi: float) -> float:
    """P(X <= lam - floor(lam/2)) for X ~ Bin(lam, xi), summed exactly."""
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"xi must lie in [0, 1], got {xi}")
    upper = lam - lam // 2
    if xi == 0.0:
        return 1.0
    if xi == 1.0:
        return 1.0 if upper >= lam else 0.0
    terms = [_log_binom_pmf(lam, i, xi) for i in range(upper + 1)]
    top = max(terms)
    total = top + math.log(math.fsum(math.exp(t - top) for t in terms))
    return min(1.0, math.exp(total))


def check_hyperparameters(hp: Hyperparameters, dims: ProblemDims) -> None:
    """Raise ``ValueError`` if ``hp`` violates its structural invariants."""
    w = hp.weights
    if len(w) != hp.lam:
        raise ValueError("weights must have length lambda")
    if np.any(np.diff(w) > 0):
        raise ValueError("weights must be non-increasing")
    if np.any(w[hp.mu:] != 0) or abs(w[: hp.mu].sum() - 1) > 1e-12:
        raise ValueError("first mu weights must sum to 1, the rest must be 0")
    if abs(hp.mu_eff - 1 / np.sum(w**2)) > 1e-12:
        raise ValueError("mu_eff inconsistent with weights")
    if not (0 < hp.c_1 + hp.c_mu <= 1 and 0 < hp.c_sigma < 1 and 0 < hp.c_c < 1):
        raise ValueError("learning rates out of range")
    k = np.asarray(dims.categories, dtype=float)
    if len(hp.margins) != dims.n_ca or np.any(hp.margins <= 0) or np.any(hp.margins >= 1 / k):
        raise ValueError("margins must satisfy 0 < q_min < 1/K_n")

