"""Proportional and layered reinsurance: loss split, pricing, adjustment, checks.

Ground-up loss that no layer covers (below the first attachment, in gaps
between layers, above the last exhaustion point) stays with the insurer, so
for every claim ``retained + sum(ceded) == claim``.

Layer indices in :class:`Violation` are 1-based to match the usual
``k = 1..K`` notation of layered programs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from .claims import ClaimDistributionSpec, FrequencySpec, sample_claim_sizes

MIN_LAYER_WIDTH = 1.0


@dataclass(frozen=True)
class Layer:
    """One layer ``[a, b]`` with insurer retention ``alpha`` and reinsurer loading ``theta``."""

    a: float
    b: float
    alpha: float
    theta: float = 0.2

    def __post_init__(self) -> None:
        for name in ("a", "alpha", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"layer {name} must be finite")
        if math.isnan(self.b):
            raise ValueError("layer b must not be NaN")


@dataclass(frozen=True)
class ProportionalContract:
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"retention must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ConstraintSet:
    psi_target: float = 0.01
    p_max: float = 150_000.0
    alpha_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        lo, hi = self.alpha_bounds
        if not 0.0 <= self.psi_target <= 1.0:
            raise ValueError(f"psi_target must lie in [0, 1], got {self.psi_target}")
        if not self.p_max > 0:
            raise ValueError(f"p_max must be > 0, got {self.p_max}")
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"alpha_bounds must satisfy 0 <= lo <= hi <= 1, got {self.alpha_bounds}")


@dataclass(frozen=True)
class DynamicAdjustment:
    delta_alpha: np.ndarray
    delta_a: np.ndarray
    delta_b: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "DynamicAdjustment":
        return cls(np.zeros(k), np.zeros(k), np.zeros(k))

    def __len__(self) -> int:
        return len(self.delta_alpha)


@dataclass(frozen=True)
class LayeredProgram:
    """Ordered layers plus the base snapshot that adjustments are measured from.

    ``base`` holds ``(alpha, a, b)`` per layer.  When omitted it is taken from
    the layers themselves; :meth:`rebased` re-anchors it at the current values.
    """

    layers: tuple[Layer, ...]
    base: tuple[tuple[float, float, float], ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if len(self.layers) < 1:
            raise ValueError("a layered program needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.base:
            object.__setattr__(self, "base", tuple((l.alpha, l.a, l.b) for l in self.layers))
        elif len(self.base) != len(self.layers):
            raise ValueError("base snapshot length must match the number of layers")

    @property
    def k(self) -> int:
        return len(self.layers)

    @cached_property
    def a(self) -> np.ndarray:
        return _frozen_array([l.a for l in self.layers])

    @cached_property
    def b(self) -> np.ndarray:
        return _frozen_array([l.b for l in self.layers])

    @cached_property
    def alpha(self) -> np.ndarray:
        return _frozen_array([l.alpha for l in self.layers])

    @cached_property
    def theta(self) -> np.ndarray:
        return _frozen_array([l.theta for l in self.layers])

    @cached_property
    def width(self) -> np.ndarray:
        return _frozen_array([l.b - l.a for l in self.layers])

    @cached_property
    def violations(self) -> tuple[Violation, ...]:
        """Structural violations (no retention bounds), computed once."""
        return tuple(validate_program(self))

    def rebased(self) -> "LayeredProgram":
        return LayeredProgram(self.layers)

    @classmethod
    def from_arrays(
        cls,
        a: Sequence[float],
        b: Sequence[float],
        alpha: Sequence[float],
        theta: Sequence[float] | float = 0.2,
        base: tuple[tuple[float, float, float], ...] = (),
    ) -> "LayeredProgram":
        if np.ndim(theta) == 0:
            theta_arr = [float(theta)] * len(a)
        else:
            theta_arr = np.broadcast_to(np.asarray(theta, dtype=float), np.shape(a))
        layers = tuple(
            Layer(float(ai), float(bi), float(al), float(th)) for ai, bi, al, th in zip(a, b, alpha, theta_arr)
        )
        return cls(layers, base)

    def to_dict(self) -> dict[str, Any]:
        return {"layers": [{"a": l.a, "b": l.b, "alpha": l.alpha, "theta": l.theta} for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LayeredProgram":
        return cls(tuple(Layer(float(x["a"]), float(x["b"]), float(x["alpha"]), float(x.get("theta", 0.2))) for x in d["layers"]))


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: int | tuple[int, int]
    message: str

    def __str__(self) -> str:
        return f"[{self.constraint}] {self.message}"


def validate_program(p: LayeredProgram, cs: ConstraintSet | None = None) -> list[Violation]:
    """All violated structural and retention constraints; empty means valid."""
    out: list[Violation] = []
    for k, l in enumerate(p.layers, start=1):
        if l.a < 0:
            out.append(Violation("attachment", k, f"layer {k}: attachment a={l.a} is negative"))
        if not l.a < l.b:
            out.append(Violation("layer-width", k, f"layer {k}: needs a < b, got a={l.a}, b={l.b}"))
        if not 0.0 <= l.alpha <= 1.0:
            out.append(Violation("retention-range", k, f"layer {k}: alpha={l.alpha} outside [0, 1]"))
        elif cs is not None:
            lo, hi = cs.alpha_bounds
            if not lo <= l.alpha <= hi:
                out.append(Violation("retention-bounds", k, f"layer {k}: alpha={l.alpha} outside [{lo}, {hi}]"))
        if l.theta < 0:
            out.append(Violation("loading", k, f"layer {k}: reinsurer loading {l.theta} is negative"))
    for k in range(1, p.k):
        lower, upper = p.layers[k - 1], p.layers[k]
        if upper.a < lower.b:
            out.append(
                Violation(
                    "layer-order",
                    (k, k + 1),
                    f"layers ({k},{k + 1}) overlap: a_{k + 1}={upper.a} < b_{k}={lower.b}",
                )
            )
    return out


def _frozen_array(values: Sequence[float]) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


def _check_structure(p: LayeredProgram) -> None:
    bad = p.violations
    if bad:
        raise ValueError("invalid layered program: " + "; ".join(str(v) for v in bad))


def _check_amounts(x: np.ndarray) -> None:
    if not (x >= 0).all():  # also false for NaN
        raise ValueError("claim amounts must be nonnegative")


def layer_losses(p: LayeredProgram, x: float | np.ndarray) -> np.ndarray:
    """Slice of each claim falling in each layer, ``min(max(x - a_k, 0), b_k - a_k)``.

    Shape is ``x.shape + (K,)``.
    """
    x = np.asarray(x, dtype=float)
    return np.minimum(np.maximum(x[..., None] - p.a, 0.0), p.width)


def retained_loss_proportional(c: ProportionalContract, x: float | np.ndarray) -> float | np.ndarray:
    xa = np.asarray(x, dtype=float)
    _check_amounts(xa)
    out = c.alpha * xa
    return float(out) if out.ndim == 0 else out


def ceded_loss_by_layer(p: LayeredProgram, x: float | np.ndarray) -> np.ndarray:
    xa = np.asarray(x, dtype=float)
    _check_amounts(xa)
    _check_structure(p)
    return (1.0 - p.alpha) * layer_losses(p, xa)


def retained_loss_layered(p: LayeredProgram, x: float | np.ndarray) -> float | np.ndarray:
    xa = np.asarray(x, dtype=float)
    ceded = ceded_loss_by_layer(p, xa).sum(axis=-1)
    out = xa - ceded
    return float(out) if out.ndim == 0 else out


def expected_layer_losses(p: LayeredProgram, severity_sample: np.ndarray) -> np.ndarray:
    """Per-claim ``E[r_k(X)]`` estimated on a fixed severity sample."""
    return layer_losses(p, severity_sample).mean(axis=0)


def premium_from_sample(p: LayeredProgram, severity_sample: np.ndarray, expected_claims: float) -> float:
    """Loaded expected cession ``sum_k (1 + theta_k) beta_k E[r_k] * expected_claims``."""
    per_claim = (1.0 + p.theta) * (1.0 - p.alpha) * expected_layer_losses(p, severity_sample)
    return float(per_claim.sum() * expected_claims)


class StopLossTable:
    """Exact sample stop-loss transform ``E[(X - t)+]`` by binary search.

    Gives the same per-layer expectations as :func:`expected_layer_losses` on
    the same sample (up to float summation order) in ``O(K log n)``.
    """

    def __init__(self, severity_sample: np.ndarray):
        x = np.sort(np.asarray(severity_sample, dtype=float).ravel())
        if x.size < 1:
            raise ValueError("severity sample must be nonempty")
        self.x = x
        self.n = x.size
        # tail[i] = sum of x[i:]
        self.tail = np.concatenate([np.cumsum(x[::-1])[::-1], [0.0]])

    def stop_loss(self, t: np.ndarray) -> np.ndarray:
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        i = np.searchsorted(self.x, t, side="right")
        return (self.tail[i] - t * (self.n - i)) / self.n

    def expected_layer_losses(self, p: LayeredProgram) -> np.ndarray:
        return np.maximum(self.stop_loss(p.a) - self.stop_loss(p.b), 0.0)

    def premium(self, p: LayeredProgram, expected_claims: float) -> float:
        per_claim = (1.0 + p.theta) * (1.0 - p.alpha) * self.expected_layer_losses(p)
        return float(per_claim.sum() * expected_claims)


def reinsurance_premium(
    p: LayeredProgram,
    spec: ClaimDistributionSpec,
    freq: FrequencySpec,
    horizon: float,
    n_mc: int,
    rng: np.random.Generator,
) -> float:
    """Budget-constraint premium over ``horizon`` years, layer expectations by Monte Carlo."""
    if n_mc < 1:
        raise ValueError(f"n_mc must be >= 1, got {n_mc}")
    _check_structure(p)
    sample = sample_claim_sizes(spec, n_mc, rng)
    return premium_from_sample(p, sample, freq.lam * horizon)


def repair_boundaries(
    a: np.ndarray,
    b: np.ndarray,
    min_width: float = MIN_LAYER_WIDTH,
    cap: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Project boundaries onto ``0 <= a_k``, ``b_k - a_k >= min_width``, ``a_{k+1} >= b_k``.

    Widths are clamped first, then each overlapping attachment is pushed up to
    the exhaustion point below it.  With a ``cap`` the tower is afterwards
    pushed back down below it, which needs ``cap >= K * min_width``.
    """
    a = np.maximum(np.asarray(a, dtype=float).copy(), 0.0)
    b = np.asarray(b, dtype=float).copy()
    k = a.size
    b = np.maximum(b, a + min_width)
    for i in range(1, k):
        if a[i] < b[i - 1]:
            a[i] = b[i - 1]
            b[i] = max(b[i], a[i] + min_width)
    if cap is not None:
        if cap < k * min_width:
            raise ValueError(f"boundary cap {cap} cannot hold {k} layers of width {min_width}")
        upper = cap
        for i in range(k - 1, -1, -1):
            b[i] = min(b[i], upper)
            a[i] = min(a[i], b[i] - min_width)
            upper = a[i]
    return a, b


def apply_dynamic_adjustment(
    p: LayeredProgram,
    adj: DynamicAdjustment,
    cs: ConstraintSet,
    min_width: float = MIN_LAYER_WIDTH,
    cap: float | None = None,
) -> LayeredProgram:
    """Offset the base snapshot by ``adj`` and project back onto the feasible set.

    The returned program keeps ``p``'s base snapshot, so repeated calls are
    measured from the same anchor.  Never raises for out-of-range adjustments.
    """
    k = p.k
    if not len(adj.delta_alpha) == len(adj.delta_a) == len(adj.delta_b) == k:
        raise ValueError(f"adjustment length must equal the number of layers ({k})")
    base = np.array(p.base, dtype=float).reshape(k, 3)
    lo, hi = cs.alpha_bounds
    alpha = np.clip(base[:, 0] + np.nan_to_num(np.asarray(adj.delta_alpha, dtype=float)), lo, hi)
    a = base[:, 1] + np.nan_to_num(np.asarray(adj.delta_a, dtype=float))
    b = base[:, 2] + np.nan_to_num(np.asarray(adj.delta_b, dtype=float))
    a, b = repair_boundaries(a, b, min_width=min_width, cap=cap)
    layers = tuple(replace(l, a=float(ai), b=float(bi), alpha=float(al)) for l, ai, bi, al in zip(p.layers, a, b, alpha))
    return LayeredProgram(layers, p.base)


def raise_retentions_to_budget(
    p: LayeredProgram,
    premium: float,
    budget: float,
    cs: ConstraintSet,
) -> LayeredProgram:
    """Scale every cession share by ``budget / premium`` (capped at the upper retention bound)."""
    if premium <= budget or premium <= 0:
        return p
    factor = max(budget, 0.0) / premium
    _, hi = cs.alpha_bounds
    alpha = np.minimum(1.0 - factor * (1.0 - p.alpha), hi)
    alpha = np.maximum(alpha, p.alpha)
    layers = tuple(replace(l, alpha=float(al)) for l, al in zip(p.layers, alpha))
    return LayeredProgram(layers, p.base)


def quantile_program(
    spec: ClaimDistributionSpec,
    quantiles: Sequence[float],
    alpha: float | Sequence[float],
    theta: float = 0.2,
) -> LayeredProgram:
    """Contiguous layers whose boundaries sit at severity quantiles."""
    edges = [0.0 if q <= 0 else spec.quantile(q) for q in quantiles]
    k = len(edges) - 1
    alphas = np.broadcast_to(np.asarray(alpha, dtype=float), (k,))
    return LayeredProgram.from_arrays(edges[:-1], edges[1:], alphas, theta)
