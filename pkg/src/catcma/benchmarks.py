"""Mixed continuous/categorical test functions.

Categorical arguments are sequences of one-hot blocks (or a zero-padded 2-D
array of them). Category indices are 0-based in storage, so "category 1" of
the formulas is column 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from catcma.hyperparams import ProblemDims


def _selected(c) -> np.ndarray:
    return np.array([int(np.argmax(block)) for block in c])


def sphere_com(x, c) -> float:
    x = np.asarray(x, dtype=float)
    first = sum(float(block[0]) for block in c)
    # categorical term first so a tiny continuous part is not absorbed
    return (len(c) - first) + float(x @ x)


def rosenbrock_clo(x, c) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValueError("RosenbrockCLO needs at least two continuous variables")
    cont = float(np.sum(100.0 * (x[:-1] ** 2 - x[1:]) ** 2 + (x[:-1] - 1.0) ** 2))
    leading = np.cumprod([float(block[0]) for block in c])
    return (len(c) - float(leading.sum())) + cont


def mc_proximity(x, c, categories=None) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) != len(c):
        raise ValueError(f"MCProximity needs n_co == n_ca, got {len(x)} and {len(c)}")
    if categories is None:
        categories = [len(block) for block in c]
    z = _selected(c) / np.asarray(categories, dtype=float)
    return float(np.sum((x - z) ** 2) + np.sum(z))


@dataclass(frozen=True)
class MixedObjective:
    name: str
    dims: ProblemDims
    evaluator: Callable[..., float]
    # index of the optimal category of every variable, when known
    optimal_category: int | None = 0

    def __call__(self, x, c) -> float:
        return self.evaluator(x, c)


def _check_shapes(x, c, dims: ProblemDims) -> None:
    if len(x) != dims.n_co or len(c) != dims.n_ca:
        raise ValueError(f"expected ({dims.n_co}, {dims.n_ca}) variables, got ({len(x)}, {len(c)})")


def make_objective(name: str, dims: ProblemDims) -> MixedObjective:
    """Build a registered benchmark for ``dims``; raises ``KeyError`` for unknown names."""
    if name not in REGISTRY:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(REGISTRY)}")
    if name == "RosenbrockCLO" and dims.n_co < 2:
        raise ValueError("RosenbrockCLO needs n_co >= 2")
    if name == "MCProximity" and dims.n_co != dims.n_ca:
        raise ValueError("MCProximity needs n_co == n_ca")
    base = REGISTRY[name]
    categories = dims.categories

    def evaluate(x, c):
        _check_shapes(x, c, dims)
        if base is mc_proximity:
            return mc_proximity(x, c, categories)
        return base(x, c)

    return MixedObjective(name, dims, evaluate)


REGISTRY: dict[str, Callable[..., float]] = {
    "SphereCOM": sphere_com,
    "RosenbrockCLO": rosenbrock_clo,
    "MCProximity": mc_proximity,
}
