"""Compound Poisson driving noise: jump laws, path sampling and moment functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _seeding

__all__ = [
    "FAMILIES",
    "JumpDistribution",
    "CompoundPoissonSpec",
    "JumpPath",
    "sample_jump_path",
    "total_variation",
    "moment_functional",
    "UnsupportedJumpLaw",
    "variation_functional_samples",
]

FAMILIES = ("constant", "gaussian", "exponential", "two-point")


class UnsupportedJumpLaw(ValueError):
    """The requested functional has no closed form for this jump law."""


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class JumpDistribution:
    """Law of the jump sizes ``U_i``.

    Parameters by family:
      constant: ``value``
      gaussian: ``mean``, ``std``
      exponential: ``rate`` (positive jumps, density ``rate e^{-rate x}``)
      two-point: ``a``, ``b``, ``p`` (``P(U = a) = p``)
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        required = {
            "constant": {"value"},
            "gaussian": {"mean", "std"},
            "exponential": {"rate"},
            "two-point": {"a", "b", "p"},
        }
        if self.family not in required:
            raise ValueError(f"unknown jump family {self.family!r}; choose from {FAMILIES}")
        keys = set(self.params)
        if keys != required[self.family]:
            raise ValueError(f"{self.family} jumps need parameters {sorted(required[self.family])}, got {sorted(keys)}")
        p = {k: float(v) for k, v in self.params.items()}
        if not all(math.isfinite(v) for v in p.values()):
            raise ValueError("jump parameters must be finite")
        if self.family == "gaussian" and p["std"] < 0:
            raise ValueError("gaussian std must be nonnegative")
        if self.family == "exponential" and p["rate"] <= 0:
            raise ValueError("exponential rate must be positive")
        if self.family == "two-point" and not 0.0 <= p["p"] <= 1.0:
            raise ValueError("two-point probability must lie in [0, 1]")
        object.__setattr__(self, "params", p)

    @classmethod
    def constant(cls, value: float) -> JumpDistribution:
        return cls("constant", {"value": value})

    @classmethod
    def gaussian(cls, mean: float = 0.0, std: float = 1.0) -> JumpDistribution:
        return cls("gaussian", {"mean": mean, "std": std})

    @classmethod
    def exponential(cls, rate: float) -> JumpDistribution:
        return cls("exponential", {"rate": rate})

    @classmethod
    def two_point(cls, a: float, b: float, p: float) -> JumpDistribution:
        return cls("two-point", {"a": a, "b": b, "p": p})

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.params
        if self.family == "constant":
            return np.full(size, p["value"])
        if self.family == "gaussian":
            return p["mean"] + p["std"] * rng.standard_normal(size)
        if self.family == "exponential":
            return rng.exponential(1.0 / p["rate"], size)
        return np.where(rng.random(size) < p["p"], p["a"], p["b"])

    @property
    def mean(self) -> float:
        p = self.params
        return {
            "constant": lambda: p["value"],
            "gaussian": lambda: p["mean"],
            "exponential": lambda: 1.0 / p["rate"],
            "two-point": lambda: p["p"] * p["a"] + (1 - p["p"]) * p["b"],
        }[self.family]()

    @property
    def abs_mean(self) -> float:
        """``E|U|``; folded-normal mean for the Gaussian family."""
        p = self.params
        if self.family == "constant":
            return abs(p["value"])
        if self.family == "gaussian":
            mu, s = p["mean"], p["std"]
            if s == 0:
                return abs(mu)
            return s * math.sqrt(2 / math.pi) * math.exp(-(mu**2) / (2 * s**2)) + mu * (1 - 2 * _norm_cdf(-mu / s))
        if self.family == "exponential":
            return 1.0 / p["rate"]
        return p["p"] * abs(p["a"]) + (1 - p["p"]) * abs(p["b"])

    @property
    def second_moment(self) -> float:
        """``E U^2`` (equal to ``E|U|^2``)."""
        p = self.params
        if self.family == "constant":
            return p["value"] ** 2
        if self.family == "gaussian":
            return p["mean"] ** 2 + p["std"] ** 2
        if self.family == "exponential":
            return 2.0 / p["rate"] ** 2
        return p["p"] * p["a"] ** 2 + (1 - p["p"]) * p["b"] ** 2

    def exp_abs_moment(self, beta: float) -> float:
        """``E e^{beta |U|}``.

        Exponential jumps have this moment only for ``beta < rate``; larger
        ``beta`` raises :class:`UnsupportedJumpLaw`.
        """
        p = self.params
        if self.family == "constant":
            return math.exp(beta * abs(p["value"]))
        if self.family == "gaussian":
            mu, s = p["mean"], p["std"]
            if s == 0:
                return math.exp(beta * abs(mu))
            q = beta**2 * s**2 / 2
            return math.exp(beta * mu + q) * _norm_cdf(mu / s + beta * s) + math.exp(-beta * mu + q) * _norm_cdf(
                -mu / s + beta * s
            )
        if self.family == "exponential":
            if beta >= p["rate"]:
                raise UnsupportedJumpLaw(f"E exp(beta|U|) is infinite for exponential rate {p['rate']} and beta={beta}")
            return p["rate"] / (p["rate"] - beta)
        return p["p"] * math.exp(beta * abs(p["a"])) + (1 - p["p"]) * math.exp(beta * abs(p["b"]))


@dataclass(frozen=True)
class CompoundPoissonSpec:
    """``L_t = sum_{i <= N_t} U_i`` with ``N`` Poisson of rate ``lam`` on ``[0, T]``."""

    lam: float
    jumps: JumpDistribution
    T: float

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError(f"jump rate must be positive, got {self.lam}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")


@dataclass(frozen=True)
class JumpPath:
    """Jump times ``0 < s_1 < ... < s_N < T`` with sizes; ``L`` is right-continuous."""

    times: np.ndarray
    sizes: np.ndarray
    T: float

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).copy()
        sizes = np.asarray(self.sizes, dtype=float).copy()
        if times.ndim != 1 or times.shape != sizes.shape:
            raise ValueError("times and sizes must be 1-D arrays of equal length")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if times[0] <= 0 or times[-1] >= self.T:
                raise ValueError("jump times must lie in (0, T)")
        times.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def empty(cls, T: float) -> JumpPath:
        return cls(np.zeros(0), np.zeros(0), T)

    @property
    def count(self) -> int:
        return int(self.times.size)

    @property
    def partial_sums(self) -> np.ndarray:
        """``S_k = U_1 + ... + U_k`` for ``k = 0..N``."""
        return np.concatenate([[0.0], np.cumsum(self.sizes)])

    def value(self, t) -> np.ndarray | float:
        """``L_t`` with the cadlag convention (a jump at ``s`` counts for ``t >= s``)."""
        t_arr = np.asarray(t, dtype=float)
        out = self.partial_sums[np.searchsorted(self.times, t_arr, side="right")]
        return out if out.ndim else float(out)

    def to_csv_rows(self):
        return [(float(s), float(u)) for s, u in zip(self.times, self.sizes)]


def sample_jump_path(spec: CompoundPoissonSpec, seed: int) -> JumpPath:
    """Draw ``N ~ Poisson(lam T)``, sorted uniform times and i.i.d. sizes from the jump stream of ``seed``."""
    rng = _seeding.stream(seed, _seeding.JUMPS)
    count = int(rng.poisson(spec.lam * spec.T))
    times = np.sort(rng.uniform(0.0, spec.T, count))
    if count and (times[0] <= 0.0 or np.any(np.diff(times) <= 0)):
        raise RuntimeError("degenerate jump times drawn (probability zero event)")
    sizes = spec.jumps.sample(rng, count)
    return JumpPath(times, sizes, spec.T)


def total_variation(path: JumpPath, t: float) -> float:
    """``|L|_t = sum_{s_i <= t} |U_i|``."""
    if not 0.0 <= t <= path.T:
        raise ValueError(f"t={t} outside [0, {path.T}]")
    k = int(np.searchsorted(path.times, t, side="right"))
    return float(np.abs(path.sizes[:k]).sum())


def moment_functional(spec: CompoundPoissonSpec, beta: float) -> float:
    """Closed form of ``E[int_0^T |L|_t^2 dt + exp(beta |L|_T)]`` with ``|L|`` the total variation.

    ``(lam E|U|)^2 T^3/3 + lam E|U|^2 T^2/2 + exp(lam T (E e^{beta|U|} - 1))``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    law = spec.jumps
    lam, T = spec.lam, spec.T
    return (
        (lam * law.abs_mean) ** 2 * T**3 / 3
        + lam * law.second_moment * T**2 / 2
        + math.exp(lam * T * (law.exp_abs_moment(beta) - 1.0))
    )


def variation_functional_samples(spec: CompoundPoissonSpec, beta: float, m: int, seed: int) -> np.ndarray:
    """Per-path ``int_0^T |L|_t^2 dt + exp(beta |L|_T)`` for paths ``seed .. seed+m-1``."""
    out = np.empty(m)
    for i in range(m):
        path = sample_jump_path(spec, seed + i)
        abs_sizes = np.abs(path.sizes)
        levels = np.cumsum(abs_sizes)
        widths = np.diff(np.concatenate([path.times, [spec.T]]))
        out[i] = float(np.sum(levels**2 * widths)) + math.exp(beta * float(abs_sizes.sum()))
    return out
