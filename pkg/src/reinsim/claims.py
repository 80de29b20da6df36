"""Claim frequency/severity models and the gross premium rate.

Severity models are small frozen dataclasses sharing a common surface
(``mean``, ``sample``, ``cdf``, ``quantile``, ``to_dict``).  All sampling goes
through an explicit :class:`numpy.random.Generator`, so every draw is a pure
function of the arguments and the generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence, Union

import numpy as np
from scipy import optimize, stats


def make_rng(seed: int | np.random.SeedSequence | np.random.Generator | None) -> np.random.Generator:
    """Return a PCG64 generator; generators pass through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_rngs(seed: int | np.random.SeedSequence, n: int) -> list[np.random.Generator]:
    """Independent child streams for parallel paths (indexed deterministically)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]


@dataclass(frozen=True)
class FrequencySpec:
    """Poisson claim intensity, in expected claims per year."""

    lam: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"claim frequency must be > 0, got {self.lam}")


@dataclass(frozen=True)
class Lognormal:
    """Lognormal severity; ``mu`` and ``sigma`` belong to the underlying normal."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu):
            raise ValueError(f"lognormal mu must be finite, got {self.mu}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"lognormal sigma must be > 0, got {self.sigma}")

    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, size=n)

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        return stats.lognorm.cdf(x, s=self.sigma, scale=math.exp(self.mu))

    def quantile(self, q: float) -> float:
        return float(stats.lognorm.ppf(q, s=self.sigma, scale=math.exp(self.mu)))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Pareto:
    """Type-I Pareto with support ``[scale, inf)``."""

    scale: float
    shape: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"pareto scale must be > 0, got {self.scale}")
        # shape <= 1 is representable (sampling works) but has no finite mean
        if not (math.isfinite(self.shape) and self.shape > 0):
            raise ValueError(f"pareto shape must be > 0, got {self.shape}")

    def mean(self) -> float:
        if self.shape <= 1:
            raise ValueError(f"pareto shape {self.shape} <= 1 has infinite mean")
        return self.scale * self.shape / (self.shape - 1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # numpy's pareto is Lomax (Pareto II); shift by one for Type I
        return self.scale * (1.0 + rng.pareto(self.shape, size=n))

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x < self.scale, 0.0, 1.0 - (self.scale / np.maximum(x, self.scale)) ** self.shape)

    def quantile(self, q: float) -> float:
        return self.scale * (1.0 - q) ** (-1.0 / self.shape)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "pareto", "scale": self.scale, "shape": self.shape}


@dataclass(frozen=True)
class Mixture:
    """Finite mixture of severity models, ``components`` = ((weight, spec), ...)."""

    components: tuple[tuple[float, "ClaimDistributionSpec"], ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        weights = [w for w, _ in self.components]
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise ValueError(f"mixture weights must be nonnegative, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {sum(weights)!r}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    def mean(self) -> float:
        return sum(w * spec.mean() for w, spec in self.components if w > 0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(n)
        if n == 0:
            return out
        which = rng.choice(len(self.components), size=n, p=self.weights)
        for i, (_, spec) in enumerate(self.components):
            idx = np.flatnonzero(which == i)
            out[idx] = spec.sample(idx.size, rng)
        return out

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        return sum(w * spec.cdf(x) for w, spec in self.components)

    def quantile(self, q: float) -> float:
        lo = min(spec.quantile(q) for _, spec in self.components)
        hi = max(spec.quantile(q) for _, spec in self.components)
        if hi <= lo:
            return lo
        return float(optimize.brentq(lambda x: float(self.cdf(x)) - q, lo, hi, xtol=1e-10))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "mixture",
            "components": [{"weight": w, **spec.to_dict()} for w, spec in self.components],
        }


ClaimDistributionSpec = Union[Lognormal, Pareto, Mixture]


def distribution_from_dict(d: Mapping[str, Any]) -> ClaimDistributionSpec:
    """Build a severity spec from its config mapping (inverse of ``to_dict``)."""
    kind = str(d.get("kind", "")).lower()
    try:
        return _from_dict(kind, d)
    except KeyError as exc:
        raise ValueError(f"{kind} distribution is missing parameter {exc.args[0]!r}") from None


def _from_dict(kind: str, d: Mapping[str, Any]) -> ClaimDistributionSpec:
    if kind == "lognormal":
        return Lognormal(float(d["mu"]), float(d["sigma"]))
    if kind == "pareto":
        return Pareto(float(d["scale"]), float(d["shape"]))
    if kind == "mixture":
        comps = tuple(
            (float(c["weight"]), distribution_from_dict({k: v for k, v in c.items() if k != "weight"}))
            for c in d["components"]
        )
        return Mixture(comps)
    raise ValueError(f"unknown distribution kind {d.get('kind')!r}")


def default_combined(mu: float = 3.5, sigma: float = 1.0, shape: float = 2.5) -> Mixture:
    """50/50 lognormal + Pareto mix, Pareto scale pinned at the lognormal median."""
    return Mixture(((0.5, Lognormal(mu, sigma)), (0.5, Pareto(math.exp(mu), shape))))


@dataclass(frozen=True)
class ClaimBatch:
    amounts: np.ndarray
    interval_index: int

    def __post_init__(self) -> None:
        if np.any(self.amounts < 0):
            raise ValueError("claim amounts must be nonnegative")

    @property
    def count(self) -> int:
        return int(self.amounts.size)


@dataclass(frozen=True)
class PremiumSpec:
    """Safety loading ``theta`` and the resulting premium rate ``c`` (per year)."""

    theta: float
    c: float

    def __post_init__(self) -> None:
        if self.theta < 0:
            raise ValueError(f"safety loading must be >= 0, got {self.theta}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError(f"premium rate must be > 0, got {self.c}")

    @classmethod
    def from_loading(cls, theta: float, freq: FrequencySpec, spec: ClaimDistributionSpec) -> "PremiumSpec":
        return cls(theta, gross_premium_rate(theta, freq, spec))


def sample_claim_count(freq: FrequencySpec, dt: float, rng: np.random.Generator) -> int:
    if dt < 0:
        raise ValueError(f"interval length must be >= 0, got {dt}")
    if dt == 0:
        return 0
    return int(rng.poisson(freq.lam * dt))


def sample_claim_sizes(spec: ClaimDistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 0:
        raise ValueError(f"claim count must be >= 0, got {n}")
    return spec.sample(int(n), rng)


def expected_claim_size(spec: ClaimDistributionSpec) -> float:
    return spec.mean()


def gross_premium_rate(theta: float, freq: FrequencySpec, spec: ClaimDistributionSpec) -> float:
    """Expected-value premium ``(1 + theta) * lambda * E[X]`` per year."""
    if theta < 0:
        raise ValueError(f"safety loading must be >= 0, got {theta}")
    return (1.0 + theta) * freq.lam * expected_claim_size(spec)


def quantile_boundaries(spec: ClaimDistributionSpec, quantiles: Sequence[float]) -> list[float]:
    return [0.0 if q <= 0 else spec.quantile(q) for q in quantiles]
