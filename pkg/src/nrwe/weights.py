"""Yitzhaki weights and their conditional (cell-by-cell) extension.

The empirical weight at ``g`` is the partial sum ``(1/n) * sum_{t_j > g}
(t_j - center_j)`` divided by a variance; within a control cell the center
is mu-hat(X) and the divisor is shared across cells, so cells where T varies
more carry more total weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid

from .condmean import CondMeanModel, delta_series, make_binning
from .core import var
from .errors import ConfigError, DegenerateTreatment, InvalidScale, NegativeWeight

NEG_TOL = 1e-12
CELL_FLOOR = 10
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid between two empirical quantiles, optionally extended to min/max.

    The extensions keep the interior spacing, up to ``4 * points`` nodes per
    tail, so that heavy tails are still resolved when the curve is integrated.
    """

    points: int = 512
    lower_q: float = 0.001
    upper_q: float = 0.999
    extend: bool = True

    def build(self, t: np.ndarray) -> np.ndarray:
        lo, hi = np.quantile(t, [self.lower_q, self.upper_q])
        if not hi > lo:
            lo, hi = float(np.min(t)), float(np.max(t))
        if not hi > lo:
            return np.array([lo])
        g = np.linspace(lo, hi, self.points)
        if not self.extend:
            return g
        step = g[1] - g[0]
        cap = 4 * self.points
        tmin, tmax = float(np.min(t)), float(np.max(t))
        parts = [g]
        if tmin < lo:
            m = int(min(cap, np.ceil((lo - tmin) / step)))
            parts.insert(0, np.linspace(tmin, lo, m + 1)[:-1])
        if tmax > hi:
            m = int(min(cap, np.ceil((tmax - hi) / step)))
            parts.append(np.linspace(hi, tmax, m + 1)[1:])
        return np.concatenate(parts)


GridLike = Union[GridSpec, Sequence[float], np.ndarray]


def _grid_for(t, grid_spec: GridLike) -> np.ndarray:
    if isinstance(grid_spec, GridSpec):
        return grid_spec.build(t)
    g = np.asarray(grid_spec, dtype=float)
    if g.ndim != 1 or len(g) < 1 or np.any(np.diff(g) <= 0):
        raise ConfigError("grid must be a strictly increasing 1-d array")
    return g


@dataclass(frozen=True)
class WeightCurve:
    grid: np.ndarray
    values: np.ndarray
    n_clamped: int = 0

    @property
    def mass(self) -> float:
        return float(trapezoid(self.values, self.grid)) if len(self.grid) > 1 else 0.0

    @property
    def argmax(self) -> float:
        return float(self.grid[int(np.argmax(self.values))])

    def scaled(self, factor: float) -> "WeightCurve":
        return WeightCurve(self.grid, self.values * factor, self.n_clamped)

    def normalized(self) -> "WeightCurve":
        m = self.mass
        return self.scaled(1.0 / m) if m > 0 else self

    def rows(self):
        return zip(self.grid, self.values)


def _clamp(values: np.ndarray) -> tuple[np.ndarray, int]:
    low = values < 0
    if not np.any(low):
        return values, 0
    worst = float(values.min())
    if worst < -NEG_TOL:
        raise NegativeWeight(f"weight {worst:.3g} below tolerance -{NEG_TOL:g}")
    out = values.copy()
    out[low] = 0.0
    return out, int(low.sum())


def _tail_sums(t_sorted: np.ndarray, centered_sorted: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """``sum_{t_j > g} centered_j`` for each grid point ``g``."""
    suffix = np.concatenate([np.cumsum(centered_sorted[::-1])[::-1], [0.0]])
    return suffix[np.searchsorted(t_sorted, grid, side="right")]


def yitzhaki_weights_empirical(t, grid_spec: GridLike = GridSpec()) -> WeightCurve:
    """Univariate Yitzhaki weights of a treatment sample on a grid."""
    t = np.asarray(t, dtype=float)
    vt = var(t)
    if not vt > 0:
        raise DegenerateTreatment("treatment has zero variance")
    grid = _grid_for(t, grid_spec)
    ts = np.sort(t, kind="stable")
    values = _tail_sums(ts, ts - t.mean(), grid) / (len(t) * vt)
    values, clamped = _clamp(values)
    return WeightCurve(grid, values, clamped)


def gaussian_conditional_weights(t, h_of_x, sigma: float, denom: float):
    """Closed-form weight ``sigma * phi((t - h(x)) / sigma) / denom`` for Gaussian T|X."""
    if not sigma > 0:
        raise InvalidScale(f"sigma must be positive, got {sigma}")
    if not denom > 0:
        raise InvalidScale(f"denominator must be positive, got {denom}")
    z = (np.asarray(t, dtype=float) - h_of_x) / sigma
    return sigma * np.exp(-0.5 * z * z) / _SQRT_2PI / denom


MODES = ("nrwe", "ols")


@dataclass(frozen=True)
class ConditionalWeightField:
    """Per-cell weight numerators sharing one denominator.

    ``curves[i]`` holds the un-normalized numerator of cell ``i``;
    ``cell_mass[i]`` is the share of observations in the cell.
    """

    cell_ids: list
    curves: list
    cell_mass: np.ndarray
    denominator: float
    mode: str
    e_var_t_given_x: float
    var_delta: float
    n_degenerate: int = 0
    n_clamped: int = 0

    def weights(self, i: int) -> WeightCurve:
        return self.curves[i].scaled(1.0 / self.denominator)

    def normalized(self, i: int) -> WeightCurve:
        return self.curves[i].normalized()

    def total_mass(self) -> float:
        masses = np.array([c.mass for c in self.curves])
        return float(np.sum(self.cell_mass * masses) / self.denominator)

    def expected_mass(self) -> float:
        """Mass implied by the denominators: 1 in NRWE mode, the OLS shrink factor otherwise."""
        return self.e_var_t_given_x / self.denominator

    def rows(self):
        for cid, mass, i in zip(self.cell_ids, self.cell_mass, range(len(self.curves))):
            w = self.weights(i)
            wn = self.normalized(i)
            for g, v, vn in zip(w.grid, w.values, wn.values):
                yield cid, mass, g, v, vn


def conditional_weight_field(data, cond_mean: CondMeanModel, mode: str = "nrwe",
                             bins: Optional[int] = None,
                             grid_spec: GridLike = GridSpec()) -> ConditionalWeightField:
    """Conditional weights w(t, x) on the cells of ``cond_mean`` (or a default binning).

    In ``nrwe`` mode the denominator is Var(T - mu-hat); in ``ols`` mode the
    variance of the misspecification error is added to it.
    """
    mode = mode.lower()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    mu = cond_mean.predict(data)
    binning = cond_mean.binning if cond_mean.binning is not None else make_binning(data, bins)
    binning.check_floor(CELL_FLOOR)
    r = data.t - mu
    e_var = var(r)
    if not e_var > 0:
        raise DegenerateTreatment("Var(T - mu(X)) is zero")
    v_delta = delta_series(data, cond_mean).variance
    denom = e_var + (v_delta if mode == "ols" else 0.0)

    order = np.lexsort((data.t, binning.cell_of))
    bounds = np.concatenate([[0], np.cumsum(binning.counts.astype(int))])
    curves = []
    degenerate = 0
    clamped = 0
    for c in range(binning.n_cells):
        sel = order[bounds[c]:bounds[c + 1]]
        tc = data.t[sel]
        if tc[0] == tc[-1]:
            degenerate += 1
            curves.append(WeightCurve(np.array([tc[0]]), np.array([0.0])))
            continue
        grid = _grid_for(tc, grid_spec)
        num = _tail_sums(tc, r[sel], grid) / len(tc)
        num, k = _clamp(num)
        clamped += k
        curves.append(WeightCurve(grid, num, k))
    return ConditionalWeightField(binning.cell_ids(), curves, binning.counts / data.n,
                                  denom, mode, e_var, v_delta, degenerate, clamped)
