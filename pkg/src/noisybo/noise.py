"""
Bounded-noise oracle wrapped around an exact problem.

Randomness comes from numpy's ``PCG64`` bit generator, whose output stream is
specified bit-for-bit and identical across platforms for a given seed.  Each
noisy evaluation draws fresh noise, so repeated calls at the same point differ.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSpec", "NoisyOracle", "EvaluationFault"]

_DISTRIBUTIONS = ("uniform", "gaussian")
GAUSSIAN_TRUNCATION = 4.0


class EvaluationFault(RuntimeError):
    """A noisy evaluation returned a non-finite value."""


@dataclass(frozen=True)
class NoiseSpec:
    """
    Elementwise noise bounds per evaluation channel.

    Uniform noise samples every element i.i.d. from ``[-eps, eps]``.  Gaussian
    noise samples ``N(0, eps^2)`` and redraws anything beyond ``4 eps`` so the
    perturbations stay bounded.
    """

    eps_f: float = 0.0
    eps_c: float = 0.0
    eps_g: float = 0.0
    eps_A: float = 0.0
    eps_W: float = 0.0
    distribution: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        for name in ("eps_f", "eps_c", "eps_g", "eps_A", "eps_W"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.distribution not in _DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {_DISTRIBUTIONS}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def uniform(cls, eps, eps_W=0.0, seed=0, distribution="uniform"):
        """Same bound on ``f``, ``c``, ``g`` and ``A``."""
        return cls(eps, eps, eps, eps, eps_W, distribution, seed)

    @property
    def is_zero(self):
        return self.eps_f == self.eps_c == self.eps_g == self.eps_A == self.eps_W == 0.0

    def zeroed(self):
        return NoiseSpec(distribution=self.distribution, seed=self.seed)

    def to_dict(self):
        return {
            "eps_f": self.eps_f, "eps_c": self.eps_c, "eps_g": self.eps_g,
            "eps_A": self.eps_A, "eps_W": self.eps_W,
            "distribution": self.distribution, "seed": self.seed,
        }


class NoisyOracle:
    """
    Noisy evaluation facade handed to the solver.

    The solver only calls :meth:`f`, :meth:`c`, :meth:`g`, :meth:`A` and
    :meth:`W`.  The exact problem stays reachable as :attr:`problem` for
    harness-side diagnostics.

    Parameters
    ----------
    problem : NlpProblem
    noise : NoiseSpec
    record : bool
        Keep every sampled perturbation in :attr:`perturbations` (for
        boundedness checks).
    """

    def __init__(self, problem, noise=None, record=False):
        self.problem = problem
        self.noise = NoiseSpec() if noise is None else noise
        self.rng = np.random.Generator(np.random.PCG64(self.noise.seed))
        self.n_calls = {"f": 0, "c": 0, "g": 0, "A": 0, "W": 0}
        self.perturbations = [] if record else None

    @property
    def n(self):
        return self.problem.n

    @property
    def m(self):
        return self.problem.m

    def _sample(self, eps, shape):
        if self.noise.distribution == "uniform":
            return self.rng.uniform(-eps, eps, size=shape)
        out = self.rng.normal(0.0, eps, size=shape)
        bad = np.abs(out) > GAUSSIAN_TRUNCATION * eps
        while np.any(bad):
            out[bad] = self.rng.normal(0.0, eps, size=int(bad.sum()))
            bad = np.abs(out) > GAUSSIAN_TRUNCATION * eps
        return out

    def _perturb(self, channel, value, eps, symmetric=False):
        self.n_calls[channel] += 1
        value = np.array(value, dtype=float)
        if eps > 0.0:
            delta = self._sample(eps, value.shape)
            if symmetric:
                delta = 0.5 * (delta + delta.T)
            if self.perturbations is not None:
                self.perturbations.append((channel, eps, delta))
            value = value + delta
        if not np.all(np.isfinite(value)):
            raise EvaluationFault(f"non-finite {channel} evaluation")
        return value

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.problem.n,):
            raise ValueError(f"x must have shape ({self.problem.n},), got {x.shape}")
        return x

    def f(self, x):
        x = self._check_x(x)
        return float(self._perturb("f", self.problem.eval_f(x), self.noise.eps_f))

    def c(self, x):
        x = self._check_x(x)
        return self._perturb("c", self.problem.eval_c(x), self.noise.eps_c)

    def g(self, x):
        x = self._check_x(x)
        return self._perturb("g", self.problem.eval_g(x), self.noise.eps_g)

    def A(self, x):
        x = self._check_x(x)
        return self._perturb("A", self.problem.eval_A(x), self.noise.eps_A)

    def W(self, x, lam):
        x = self._check_x(x)
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.problem.m,):
            raise ValueError(f"lam must have shape ({self.problem.m},), got {lam.shape}")
        return self._perturb("W", self.problem.eval_W(x, lam), self.noise.eps_W, symmetric=True)
