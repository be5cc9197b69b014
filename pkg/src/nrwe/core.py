"""Sample container, least squares and population-normalized moments.

All second moments in this package use divisor ``n`` so that the
decomposition identities hold exactly in-sample.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateTreatment, DimensionMismatch, SingularDesign

#: Gram matrices (of unit-norm columns) at or above this condition number are singular.
COND_LIMIT = 1e12
#: Relative residual-variance floor below which the treatment is degenerate.
DEGENERATE_RATIO = 1e-14


def mean(a: np.ndarray) -> float:
    return float(np.mean(a))


def cov(a: np.ndarray, b: np.ndarray) -> float:
    """Population covariance (divisor n), computed on centered data."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"length {a.shape} vs {b.shape}")
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def var(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.mean((a - a.mean()) ** 2))


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1 and ndim == 2:
        arr = arr[:, None]
    if arr.ndim != ndim:
        raise DimensionMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataMatrix:
    """Outcome ``y``, treatment ``t`` and controls ``x`` (first column constant).

    Use :meth:`from_columns` to have the constant prepended automatically.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    control_names: tuple = ()
    outcome_name: str = "y"
    treatment_name: str = "t"

    def __post_init__(self):
        y = _frozen(self.y, 1)
        t = _frozen(self.t, 1)
        x = _frozen(self.x, 2)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        n = y.shape[0]
        if t.shape[0] != n or x.shape[0] != n:
            raise DimensionMismatch(
                f"ragged columns: y={n}, t={t.shape[0]}, x={x.shape[0]}")
        k = x.shape[1]
        if n < k + 3:
            raise DimensionMismatch(
                f"need at least {k + 3} rows for {k + 1} regressors, got {n}")
        for name, arr in (("y", y), ("t", t), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DimensionMismatch(f"non-finite entries in {name}")
        if not np.all(x[:, 0] == 1.0):
            raise DimensionMismatch("first control column must be identically 1")
        names = tuple(self.control_names) or ("const",) + tuple(
            f"x{j}" for j in range(1, k))
        if len(names) != k:
            raise DimensionMismatch(f"{len(names)} control names for {k} columns")
        object.__setattr__(self, "control_names", names)

    @classmethod
    def from_columns(cls, y, t, controls=None, names: Sequence[str] = (),
                     outcome_name="y", treatment_name="t") -> "DataMatrix":
        """Build from raw columns, prepending the constant to ``controls``."""
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        if controls is None:
            x = np.ones((n, 1))
        else:
            c = np.asarray(controls, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != n:
                raise DimensionMismatch(f"controls have {c.shape[0]} rows, y has {n}")
            x = np.column_stack([np.ones(n), c])
        names = ("const",) + tuple(names) if names else ()
        return cls(y, t, x, names, outcome_name, treatment_name)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name in ("y", self.outcome_name):
            return self.y
        if name in ("t", self.treatment_name):
            return self.t
        if name in self.control_names:
            return self.x[:, self.control_names.index(name)]
        raise DimensionMismatch(f"unknown column {name!r}")

    def fingerprint(self) -> str:
        """Hash of the (t, x) columns, which is all a conditional-mean fit sees."""
        h = hashlib.sha256()
        h.update(str(self.n).encode())
        h.update(np.ascontiguousarray(self.t).tobytes())
        h.update(np.ascontiguousarray(self.x).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    regressor_names: tuple = ()
    condition_number: float = 1.0

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.regressor_names.index(name)])


def lstsq(design: np.ndarray, target: np.ndarray, names: Sequence[str] = ()) -> OlsFit:
    """Least squares through a column-pivoted QR factorization.

    Columns are scaled to unit norm before factorizing; the condition number
    reported (and checked against ``COND_LIMIT``) is that of the scaled Gram
    matrix.
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design has {a.shape[0]} rows, target has {y.shape[0]}")
    scale = np.sqrt(np.einsum("ij,ij->j", a, a))
    if np.any(scale == 0):
        raise SingularDesign("design has an all-zero column")
    q, r, perm = scipy.linalg.qr(a / scale, mode="economic", pivoting=True)
    sv = np.linalg.svd(r, compute_uv=False)
    cond = np.inf if sv[-1] == 0 else (sv[0] / sv[-1]) ** 2
    if not cond < COND_LIMIT:
        raise SingularDesign(f"Gram matrix condition number {cond:.3g} >= {COND_LIMIT:g}")
    z = scipy.linalg.solve_triangular(r, q.T @ y)
    coef = np.empty_like(z)
    coef[perm] = z
    coef = coef / scale
    fitted = a @ coef
    return OlsFit(coef, y - fitted, fitted, tuple(names), float(cond))


def ols_fit(data: DataMatrix, lhs: str, rhs: Sequence[str]) -> OlsFit:
    """Regress column ``lhs`` on the columns named in ``rhs``."""
    design = np.column_stack([data.column(c) for c in rhs])
    return lstsq(design, data.column(lhs), rhs)


def project_treatment(data: DataMatrix) -> OlsFit:
    """Linear projection of T on the controls (the pi-hat X fit)."""
    return lstsq(data.x, data.t, data.control_names)


def fwl_residualize(data: DataMatrix, fit: OlsFit | None = None) -> tuple[np.ndarray, float]:
    """Residualize T on X and return ``(t_resid, beta)``.

    ``beta = Cov(Y, t_resid) / Var(t_resid)`` equals the coefficient on T
    in the full regression of Y on (T, X).  ``fit`` may pass in an existing
    :func:`project_treatment` result.
    """
    fit = fit if fit is not None else project_treatment(data)
    r = fit.residuals
    vr = var(r)
    if vr <= DEGENERATE_RATIO * var(data.t):
        raise DegenerateTreatment(
            f"residual treatment variance {vr:.3g} is negligible relative to Var(T)")
    return r, cov(data.y, r) / vr


def abel_covariance(t, y) -> float:
    """Covariance of ``t`` and ``y`` by summation by parts over T-sorted pairs.

    With the sample sorted on ``t`` (stable on ties),
    ``Cov = sum_i D_i (y_(i+1) - y_(i))`` where ``D_i`` is ``1/n`` times the
    sum of ``t_(j) - mean(t)`` over ``j > i``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise DimensionMismatch(f"shapes {t.shape} and {y.shape}")
    n = t.shape[0]
    if n < 2:
        raise DimensionMismatch("need at least two observations")
    order = np.argsort(t, kind="stable")
    ts = t[order] - t.mean()
    ys = y[order]
    tail = np.cumsum(ts[::-1])[::-1][1:] / n
    return float(np.sum(tail * np.diff(ys)))


@dataclass(frozen=True)
class MomentSet:
    mean_t: float
    var_t: float
    cov_yt: float
    cross: dict = field(default_factory=dict)


def moments(data: DataMatrix) -> MomentSet:
    cross = {}
    for j, name in enumerate(data.control_names[1:], start=1):
        xj = data.x[:, j]
        cross[f"cov_t_{name}"] = cov(data.t, xj)
        cross[f"cov_y_{name}"] = cov(data.y, xj)
    return MomentSet(mean(data.t), var(data.t), cov(data.y, data.t), cross)
