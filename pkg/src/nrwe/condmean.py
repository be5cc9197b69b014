"""Estimators of mu(X) = E[T|X] and the misspecification error mu(X) - pi X.

Three methods are offered:

``linear``
    mu-hat is the linear projection itself, so the misspecification error is
    identically zero.
``binned``
    Piecewise-constant cell means over equal-frequency bins of each
    non-constant control (distinct values are used directly when a control
    has few of them, which saturates discrete designs).
``local_linear``
    Local-linear regression with a product Gaussian kernel and Silverman
    bandwidths, computed on a linearly binned lattice and interpolated back
    to the sample points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import DataMatrix, cov, project_treatment, var
from .errors import (ConfigError, DimensionMismatch, FingerprintMismatch,
                     SparseCell, TooFewObservations, UnsupportedDimension)

METHODS = ("linear", "binned", "local_linear")
MIN_FIT_OBS = 50
MAX_BINS_PER_CONTROL = 256
MAX_CELLS = 4096
MAX_LOCAL_LINEAR_DIM = 3
_LATTICE_SIZE = {1: 1024, 2: 160, 3: 48}


def default_bin_count(n: int, n_controls: int = 1) -> int:
    """Smallest b with b**3 >= n, capped per control and on the cross product."""
    b = max(1, round(n ** (1.0 / 3.0)))
    while b ** 3 < n:
        b += 1
    while b > 1 and (b - 1) ** 3 >= n:
        b -= 1
    b = min(b, MAX_BINS_PER_CONTROL)
    if n_controls > 1:
        b = min(b, int(math.floor(MAX_CELLS ** (1.0 / n_controls) + 1e-9)))
    return max(b, 1)


# -- binning -----------------------------------------------------------------

@dataclass(frozen=True)
class Axis:
    """Bin rule for one control: explicit ``levels`` or interior ``cuts``."""

    levels: Optional[np.ndarray] = None
    cuts: Optional[np.ndarray] = None

    def assign(self, values: np.ndarray) -> np.ndarray:
        if self.levels is not None:
            idx = np.searchsorted(self.levels, values)
            idx = np.clip(idx, 0, len(self.levels) - 1)
            if not np.array_equal(self.levels[idx], values):
                raise DimensionMismatch("value outside the fitted discrete levels")
            return idx
        return np.searchsorted(self.cuts, values, side="right")

    @property
    def size(self) -> int:
        return len(self.levels) if self.levels is not None else len(self.cuts) + 1

    def to_dict(self) -> dict:
        if self.levels is not None:
            return {"levels": self.levels.tolist()}
        return {"cuts": self.cuts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Axis":
        if "levels" in d:
            return cls(levels=np.asarray(d["levels"], dtype=float))
        return cls(cuts=np.asarray(d["cuts"], dtype=float))


def _axis_for(values: np.ndarray, bins: int) -> Axis:
    uniq = np.unique(values)
    if len(uniq) <= bins:
        return Axis(levels=uniq)
    q = np.quantile(values, np.linspace(0.0, 1.0, bins + 1), method="linear")
    cuts = np.unique(q[1:-1])
    return Axis(cuts=cuts)


@dataclass(frozen=True)
class Binning:
    """Partition of the sample into control cells.

    ``cell_of`` maps each observation to a compact cell index; ``keys`` holds
    the per-axis bin tuple of each cell, in ascending lexicographic order.
    """

    axes: tuple
    cell_of: np.ndarray
    keys: np.ndarray
    counts: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.counts)

    def cell_ids(self) -> list:
        return ["-".join(str(int(v)) for v in key) if len(key) else "all"
                for key in self.keys]

    def means(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell_of, weights=values, minlength=self.n_cells) / self.counts

    def check_floor(self, floor: int):
        sparse = np.flatnonzero(self.counts < floor)
        if len(sparse):
            ids = [self.cell_ids()[i] for i in sparse]
            shown = ", ".join(ids[:10]) + (" ..." if len(ids) > 10 else "")
            raise SparseCell(
                f"{len(ids)} cell(s) below {floor} observations: {shown}", ids)


def _assign_cells(axes, xc):
    if not axes:
        return np.zeros((1, 0), dtype=np.int64), np.zeros(xc.shape[0], dtype=np.int64)
    idx = np.column_stack([ax.assign(xc[:, j]) for j, ax in enumerate(axes)])
    dims = tuple(ax.size for ax in axes)
    flat = np.ravel_multi_index(tuple(idx.T), dims)
    uniq, inverse = np.unique(flat, return_inverse=True)
    keys = np.column_stack(np.unravel_index(uniq, dims)) if len(dims) else np.zeros((1, 0))
    return keys.astype(np.int64), inverse.astype(np.int64)


def make_binning(data: DataMatrix, bins: Optional[int] = None) -> Binning:
    """Cells from the cross product of per-control bins (constant column excluded)."""
    xc = data.x[:, 1:]
    d = xc.shape[1]
    nb = bins if bins is not None else default_bin_count(data.n, max(d, 1))
    if nb < 1:
        raise ConfigError("bin count must be positive")
    axes = tuple(_axis_for(xc[:, j], nb) for j in range(d))
    keys, cell_of = _assign_cells(axes, xc)
    counts = np.bincount(cell_of, minlength=len(keys)).astype(float)
    return Binning(axes, cell_of, keys, counts)


# -- local linear ------------------------------------------------------------

def silverman_bandwidth(xc: np.ndarray) -> np.ndarray:
    n, d = xc.shape
    sd = xc.std(axis=0)
    return sd * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


def _lattice(xc, sizes):
    """Linear-binning corner indices and weights for each observation."""
    lo = xc.min(axis=0)
    hi = xc.max(axis=0)
    step = np.where(hi > lo, (hi - lo) / (np.asarray(sizes) - 1), 1.0)
    pos = (xc - lo) / step
    base = np.clip(np.floor(pos).astype(np.int64), 0, np.asarray(sizes) - 2)
    frac = pos - base
    d = xc.shape[1]
    corners = []
    for bits in range(2 ** d):
        offs = np.array([(bits >> j) & 1 for j in range(d)])
        w = np.prod(np.where(offs, frac, 1.0 - frac), axis=1)
        flat = np.ravel_multi_index(tuple((base + offs).T), tuple(sizes))
        corners.append((flat, w))
    grids = [lo[j] + step[j] * np.arange(sizes[j]) for j in range(d)]
    return grids, step, corners


def local_linear_fit(xc: np.ndarray, t: np.ndarray, bandwidth=None,
                     lattice_size=None) -> tuple[np.ndarray, np.ndarray]:
    """Local-linear estimate of E[t | xc] at each sample point.

    Returns ``(fitted, bandwidth)``.  Data are linearly binned onto a regular
    lattice, the local moment sums are formed with separable kernel
    correlations, the weighted least-squares intercept is solved at every
    lattice node, and node values are interpolated back with the binning
    weights.
    """
    n, d = xc.shape
    h = silverman_bandwidth(xc) if bandwidth is None else np.asarray(bandwidth, float)
    h = np.where(h > 0, h, 1.0)
    m = lattice_size or _LATTICE_SIZE[d]
    sizes = [m] * d
    grids, step, corners = _lattice(xc, sizes)
    total = int(np.prod(sizes))
    counts = np.zeros(total)
    sums = np.zeros(total)
    for flat, w in corners:
        counts += np.bincount(flat, weights=w, minlength=total)
        sums += np.bincount(flat, weights=w * t, minlength=total)
    counts = counts.reshape(sizes)
    sums = sums.reshape(sizes)

    kern = []
    for j in range(d):
        half = int(min(sizes[j] - 1, math.ceil(4.0 * h[j] / step[j])))
        u = step[j] * np.arange(-half, half + 1)
        k0 = np.exp(-0.5 * (u / h[j]) ** 2)
        kern.append((k0, k0 * u, k0 * u * u))

    def smooth(arr, powers):
        out = arr
        for j in range(d):
            out = ndimage.correlate1d(out, kern[j][powers[j]], axis=j, mode="constant")
        return out

    zero = [0] * d
    s0 = smooth(counts, zero)
    t0 = smooth(sums, zero)
    p = d + 1
    a = np.zeros(sizes + [p, p])
    b = np.zeros(sizes + [p])
    a[..., 0, 0] = s0
    b[..., 0] = t0
    for j in range(d):
        e = list(zero)
        e[j] = 1
        s1 = smooth(counts, e)
        a[..., 0, j + 1] = a[..., j + 1, 0] = s1
        b[..., j + 1] = smooth(sums, e)
        for k in range(j, d):
            e2 = list(zero)
            e2[j] += 1
            e2[k] += 1
            s2 = smooth(counts, e2)
            a[..., j + 1, k + 1] = a[..., k + 1, j + 1] = s2

    node = np.full(sizes, np.nan)
    ok = s0 > 1e-8 * s0.max()
    a_ok = a[ok]
    b_ok = b[ok]
    # scale-free conditioning check; nodes with a near-singular local design
    # fall back to the local constant fit
    ev = np.linalg.eigvalsh(a_ok)
    with np.errstate(divide="ignore", invalid="ignore"):
        det_ok = (ev[:, 0] > 0) & (ev[:, -1] / ev[:, 0] < 1e10)
    sol = np.full(a_ok.shape[0], np.nan)
    if np.any(det_ok):
        sol[det_ok] = np.linalg.solve(a_ok[det_ok], b_ok[det_ok][..., None])[:, 0, 0]
    sol[~det_ok] = (b_ok[~det_ok, 0] / a_ok[~det_ok, 0, 0])
    node[ok] = sol
    flat_node = node.ravel()
    fitted = np.zeros(n)
    weight = np.zeros(n)
    for flat, w in corners:
        vals = flat_node[flat]
        good = np.isfinite(vals) & (w > 0)
        fitted[good] += w[good] * vals[good]
        weight[good] += w[good]
    fitted /= weight
    return fitted, h


# -- model -------------------------------------------------------------------

@dataclass
class CondMeanModel:
    """A fitted estimate of E[T|X], tied to the data it was fitted on."""

    method: str
    parameters: dict
    fingerprint: str
    n: int
    fitted: Optional[np.ndarray] = None
    binning: Optional[Binning] = None
    n_degenerate_cells: int = 0

    def predict(self, data: DataMatrix) -> np.ndarray:
        """mu-hat at each sample point of ``data`` (must be the fitted data)."""
        if data.fingerprint() != self.fingerprint:
            raise FingerprintMismatch(
                f"model fitted on data {self.fingerprint}, got {data.fingerprint()}")
        if self.fitted is None:
            self.fitted = self._recompute(data)
        return self.fitted

    def _recompute(self, data):
        p = self.parameters
        if self.method == "linear":
            return project_treatment(data).fitted
        if self.method == "binned":
            axes = tuple(Axis.from_dict(a) for a in p["axes"])
            keys, cell_of = _assign_cells(axes, data.x[:, 1:])
            lookup = {tuple(k): m for k, m in zip(p["cells"], p["means"])}
            means = np.array([lookup[tuple(int(v) for v in key)] for key in keys])
            return means[cell_of]
        fitted, _ = local_linear_fit(data.x[:, 1:], data.t, p["bandwidth"], p["lattice_size"])
        return fitted

    def to_dict(self) -> dict:
        return {"method": self.method, "fingerprint": self.fingerprint, "n": self.n,
                "parameters": self.parameters}

    def to_json(self) -> str:
        from .io import dumps
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CondMeanModel":
        if d.get("method") not in METHODS:
            raise ConfigError(f"unknown conditional-mean method {d.get('method')!r}")
        return cls(d["method"], d["parameters"], d["fingerprint"], int(d["n"]))

    @classmethod
    def from_json(cls, text: str) -> "CondMeanModel":
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model document: {exc}") from None


def fit_cond_mean(data: DataMatrix, method: str = "binned", bins: Optional[int] = None,
                  bandwidth: Optional[Sequence[float]] = None,
                  lattice_size: Optional[int] = None) -> CondMeanModel:
    """Fit E[T|X] on ``data`` with the named method."""
    method = method.replace("-", "_")
    if method not in METHODS:
        raise ConfigError(f"unknown conditional-mean method {method!r}")
    fp = data.fingerprint()
    if method == "linear":
        fit = project_treatment(data)
        return CondMeanModel("linear", {"coefficients": fit.coefficients.tolist()},
                             fp, data.n, fit.fitted)
    if data.n < MIN_FIT_OBS:
        raise TooFewObservations(f"{method} needs at least {MIN_FIT_OBS} rows, got {data.n}")
    d = data.k - 1
    if method == "binned":
        binning = make_binning(data, bins)
        means = binning.means(data.t)
        within = np.bincount(binning.cell_of, weights=(data.t - means[binning.cell_of]) ** 2,
                             minlength=binning.n_cells)
        params = {"axes": [ax.to_dict() for ax in binning.axes],
                  "cells": binning.keys.tolist(), "means": means.tolist(),
                  "counts": binning.counts.astype(int).tolist()}
        return CondMeanModel("binned", params, fp, data.n, means[binning.cell_of],
                             binning, int(np.sum(within == 0)))
    if d > MAX_LOCAL_LINEAR_DIM:
        raise UnsupportedDimension(
            f"local_linear supports at most {MAX_LOCAL_LINEAR_DIM} non-constant controls, got {d}")
    if d == 0:
        fitted = np.full(data.n, data.t.mean())
        return CondMeanModel("local_linear", {"bandwidth": [], "lattice_size": None},
                             fp, data.n, fitted)
    fitted, h = local_linear_fit(data.x[:, 1:], data.t, bandwidth, lattice_size)
    params = {"bandwidth": h.tolist(), "lattice_size": lattice_size or _LATTICE_SIZE[d]}
    return CondMeanModel("local_linear", params, fp, data.n, fitted)


# -- misspecification error --------------------------------------------------

@dataclass(frozen=True)
class DeltaSeries:
    values: np.ndarray
    variance: float
    cov_with_y: float
    projection: np.ndarray = field(repr=False, default=None)


def delta_series(data: DataMatrix, model: CondMeanModel) -> DeltaSeries:
    """mu-hat(X) - pi-hat X, with pi-hat from the same sample."""
    mu = model.predict(data)
    proj = project_treatment(data).fitted
    values = mu - proj
    return DeltaSeries(values, var(values), cov(data.y, values), proj)


# -- profiles ----------------------------------------------------------------

PROFILE_SPARSE = 5


@dataclass(frozen=True)
class Profile:
    control: str
    x: np.ndarray
    mean_t: np.ndarray
    count: np.ndarray
    edges: np.ndarray

    @property
    def sparse(self) -> np.ndarray:
        return self.count < PROFILE_SPARSE

    def rows(self):
        for xv, m, c, s in zip(self.x, self.mean_t, self.count, self.sparse):
            yield xv, m, int(c), int(s)


def profile_cond_mean(data: DataMatrix, control_index: int, grid=20) -> Profile:
    """Binned means of T against one control.

    ``grid`` is a bin count (equal-width over the control's range) or an
    explicit increasing array of edges.  Bins with fewer than five
    observations are kept and flagged through :attr:`Profile.sparse`.
    """
    if not 1 <= control_index < data.k:
        raise DimensionMismatch(f"control index {control_index} out of range 1..{data.k - 1}")
    xj = data.x[:, control_index]
    lo, hi = float(xj.min()), float(xj.max())
    if lo == hi:
        raise DimensionMismatch(f"control {data.control_names[control_index]!r} is constant")
    if np.ndim(grid) == 0:
        edges = np.linspace(lo, hi, int(grid) + 1)
    else:
        edges = np.asarray(grid, dtype=float)
    idx = np.clip(np.searchsorted(edges, xj, side="right") - 1, 0, len(edges) - 2)
    nb = len(edges) - 1
    count = np.bincount(idx, minlength=nb).astype(float)
    sums = np.bincount(idx, weights=data.t, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_t = sums / count
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Profile(data.control_names[control_index], centers, mean_t, count, edges)
