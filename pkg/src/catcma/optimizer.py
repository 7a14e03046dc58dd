"""Ask/tell optimizer over a joint Gaussian x categorical distribution."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from catcma import categorical as cat
from catcma import gaussian as gauss
from catcma.categorical import CategoricalState
from catcma.gaussian import GaussianState, RankedSteps, StateCorruptionError
from catcma.hyperparams import Hyperparameters, ProblemDims, check_hyperparameters, default_hyperparameters

MODES = ("full", "no_enhancement")
_SCALE_LOW, _SCALE_HIGH = 1e-20, 1e20


class AskTellError(RuntimeError):
    """Raised when ask and tell are called out of order or with bad input."""


@dataclass
class Candidate:
    x: np.ndarray
    c: np.ndarray  # (n_ca, k_max) one-hot rows, zero-padded
    fitness: Optional[float] = None


@dataclass
class Best:
    x: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    f: float = math.inf


@dataclass
class TerminationCriteria:
    max_evals: Optional[int] = None
    target_f: Optional[float] = None
    max_iter: Optional[int] = None
    sigma_tol: Optional[float] = None
    delta_tol: Optional[float] = None


def _rebalance_scale(g: GaussianState) -> None:
    """Move the overall scale of C into sigma when C drifts far from unit size.

    The updates are invariant under (sigma, C, p_c) -> (a sigma, C / a^2, p_c / a),
    so this only guards against under/overflow once the clamp starts pumping
    sigma up while C keeps shrinking.
    """
    top = float(np.max(np.diag(g.cov)))
    if _SCALE_LOW < top < _SCALE_HIGH:
        return
    a = math.sqrt(top)
    g.cov = g.cov / top
    g.sigma *= a
    g.path_cov = g.path_cov / a


class CatCMA:
    """Mixed continuous/categorical optimizer with an ask/tell interface.

    Example::

        dims = ProblemDims.uniform(3, 3, 3)
        opt = CatCMA(dims, mean=np.zeros(3), seed=1)
        while opt.should_terminate(TerminationCriteria(max_evals=2000)) is None:
            cands = opt.ask()
            opt.tell([sphere_com(s.x, s.c) for s in cands])

    ``mode="no_enhancement"`` runs the plain IGO update: rank-mu covariance
    only, sigma frozen at its initial value, fixed categorical learning rates.
    """

    def __init__(
        self,
        dims: ProblemDims,
        mean=None,
        sigma: float = 1.0,
        cov=None,
        q=None,
        mode: str = "full",
        seed: Optional[int] = None,
        hp: Optional[Hyperparameters] = None,
        debug: bool = False,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.dims = dims
        self.mode = mode
        self.hp = default_hyperparameters(dims) if hp is None else hp
        check_hyperparameters(self.hp, dims)
        if mean is None:
            mean = np.zeros(dims.n_co)
        if len(mean) != dims.n_co:
            raise ValueError(f"mean must have length {dims.n_co}, got {len(mean)}")
        self.gaussian = GaussianState.initial(mean, sigma, cov)
        self.categorical = CategoricalState.initial(dims.categories, q)
        self.sigma0 = float(sigma)
        self.eta = 1.0 / (dims.n_ca * (np.asarray(dims.categories, dtype=float) - 1))
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.eval_count = 0
        self.best = Best()
        self.debug = debug
        self._pending: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    @property
    def population_size(self) -> int:
        return self.hp.lam

    @property
    def generation(self) -> int:
        return self.gaussian.iteration

    def ask(self) -> list[Candidate]:
        if self._pending is not None:
            raise AskTellError("ask called twice without tell")
        lam = self.hp.lam
        if self.dims.n_co:
            ys, xs = gauss.sample_continuous(self.gaussian, lam, self.rng)
        else:
            ys = xs = np.zeros((lam, 0))
        cs = cat.sample_categorical(self.categorical, lam, self.rng)
        self._pending = (ys, xs, cs)
        return [Candidate(xs[i].copy(), cs[i].copy()) for i in range(lam)]

    def tell(self, fitnesses: Sequence[float]) -> None:
        if self._pending is None:
            raise AskTellError("tell called without a pending ask")
        f = np.asarray(fitnesses, dtype=float)
        if f.shape != (self.hp.lam,):
            raise AskTellError(f"expected {self.hp.lam} fitness values, got {f.shape}")
        if np.any(np.isnan(f)):
            raise ValueError("fitness values must not be NaN")
        ys, xs, cs = self._pending
        self._pending = None

        order = np.argsort(f, kind="stable")
        if f[order[0]] < self.best.f:
            self.best = Best(xs[order[0]].copy(), cs[order[0]].copy(), float(f[order[0]]))
        self.eval_count += self.hp.lam

        ranked = RankedSteps(ys[order], self.hp.weights)
        onehots = cs[order]
        if self.mode == "full":
            self._update_full(ranked, onehots)
        else:
            self._update_plain(ranked, onehots)
        if self.debug:
            self.check_invariants()

    def _update_full(self, ranked: RankedSteps, onehots: np.ndarray) -> None:
        hp = self.hp
        g = self.gaussian
        if self.dims.n_co:
            mean = gauss.update_mean(g, ranked, hp)
            ps, pc, h_sigma = gauss.update_evolution_paths(g, ranked, hp)
            cov = gauss.update_covariance(g, ranked, pc, h_sigma, hp)
            sigma = gauss.update_step_size(g, ps, hp)
            g = GaussianState(mean, sigma, cov, ps, pc, g.iteration)

        c = self.categorical
        grad = cat.estimated_natural_gradient(c.q, onehots, hp.weights)
        c = cat.asng_update(c, grad, hp)

        if self.dims.n_co:
            g.sigma = gauss.clamp_step_size(g, hp.lambda_min_eig)
            _rebalance_scale(g)
        c.q = cat.margin_correction(c.q, hp.margins, c.categories)
        g.iteration += 1
        self.gaussian, self.categorical = g, c

    def _update_plain(self, ranked: RankedSteps, onehots: np.ndarray) -> None:
        hp = self.hp
        g = self.gaussian
        if self.dims.n_co:
            mean = g.mean + g.sigma * ranked.weighted_step
            w = ranked.weights
            cov = g.cov + hp.c_mu * ((ranked.steps.T * w) @ ranked.steps - w.sum() * g.cov)
            g = GaussianState(mean, g.sigma, (cov + cov.T) / 2, g.path_sigma, g.path_cov, g.iteration)

        c = self.categorical
        grad = cat.estimated_natural_gradient(c.q, onehots, hp.weights)
        q = cat.igo_q_update(c.q, grad, self.eta)
        q = cat.margin_correction(q, hp.margins, c.categories)
        g.iteration += 1
        self.gaussian = g
        self.categorical = CategoricalState(q, c.categories, c.s, c.gamma, c.delta)

    def should_terminate(self, criteria: TerminationCriteria) -> Optional[str]:
        if criteria.max_evals is not None and self.eval_count >= criteria.max_evals:
            return "budget"
        if criteria.target_f is not None and self.best.f <= criteria.target_f:
            return "target"
        if criteria.max_iter is not None and self.generation >= criteria.max_iter:
            return "max_iter"
        if (
            criteria.sigma_tol is not None
            and criteria.delta_tol is not None
            and self.gaussian.sigma < criteria.sigma_tol
            and self.categorical.delta < criteria.delta_tol
        ):
            return "tolerance"
        return None

    def check_invariants(self) -> None:
        """Raise ``StateCorruptionError`` if the distribution state is invalid."""
        gauss.check_gaussian_state(self.gaussian)
        c = self.categorical
        cat.check_simplex(c.q, c.categories, self.hp.margins)
        if not (c.delta > 0 and math.isfinite(c.delta)) or c.gamma < 0:
            raise StateCorruptionError("trust-region state is invalid")
        if self.dims.n_co:
            g = self.gaussian
            if self.mode == "full" and g.sigma**2 * np.linalg.eigvalsh(g.cov)[0] < self.hp.lambda_min_eig * (1 - 1e-9):
                raise StateCorruptionError("eigenvalue floor of sigma^2 C violated")

    # --- checkpointing -------------------------------------------------

    def snapshot(self) -> str:
        """Serialise the full optimizer state as ``key = json`` lines."""
        g, c = self.gaussian, self.categorical
        fields = {
            "format": "catcma-state-v1",
            "n_co": self.dims.n_co,
            "categories": list(self.dims.categories),
            "mode": self.mode,
            "seed": self.seed,
            "sigma0": self.sigma0,
            "eval_count": self.eval_count,
            "iteration": g.iteration,
            "mean": g.mean.tolist(),
            "sigma": g.sigma,
            "cov": g.cov.tolist(),
            "path_sigma": g.path_sigma.tolist(),
            "path_cov": g.path_cov.tolist(),
            "q": c.q.tolist(),
            "s": c.s.tolist(),
            "gamma": c.gamma,
            "delta": c.delta,
            "margins": self.hp.margins.tolist(),
            "best_f": self.best.f if math.isfinite(self.best.f) else None,
            "best_x": None if self.best.x is None else self.best.x.tolist(),
            "best_c": None if self.best.c is None else self.best.c.tolist(),
            "rng_state": self.rng.bit_generator.state,
        }
        return "".join(f"{key} = {json.dumps(value)}\n" for key, value in fields.items())

    @classmethod
    def restore(cls, text: str) -> "CatCMA":
        if any(line.strip() and "=" not in line for line in text.splitlines()):
            raise ValueError("malformed state snapshot")
        fields = {}
        for line in text.splitlines():
            if line.strip():
                key, value = line.split("=", 1)
                fields[key.strip()] = json.loads(value)
        if fields.get("format") != "catcma-state-v1":
            raise ValueError("unsupported snapshot format")
        dims = ProblemDims(fields["n_co"], tuple(fields["categories"]))
        hp = default_hyperparameters(dims)
        hp = Hyperparameters(**{**hp.__dict__, "margins": np.asarray(fields["margins"], dtype=float)})
        opt = cls(dims, fields["mean"], fields["sigma0"], mode=fields["mode"], seed=fields["seed"], hp=hp)
        opt.gaussian = GaussianState(
            np.asarray(fields["mean"], dtype=float),
            float(fields["sigma"]),
            np.asarray(fields["cov"], dtype=float).reshape(dims.n_co, dims.n_co),
            np.asarray(fields["path_sigma"], dtype=float),
            np.asarray(fields["path_cov"], dtype=float),
            int(fields["iteration"]),
        )
        opt.categorical = CategoricalState(
            np.asarray(fields["q"], dtype=float),
            dims.categories,
            np.asarray(fields["s"], dtype=float),
            float(fields["gamma"]),
            float(fields["delta"]),
        )
        opt.eval_count = int(fields["eval_count"])
        best_f = fields["best_f"]
        if best_f is not None:
            opt.best = Best(np.asarray(fields["best_x"]), np.asarray(fields["best_c"]), float(best_f))
        opt.rng.bit_generator.state = fields["rng_state"]
        return opt
