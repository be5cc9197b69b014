"""Split the OLS coefficient on T into a weighted effect and a misspecification bias.

With r = T - pi-hat X (the FWL residual), mu = mu(X) and Delta = mu - pi-hat X,

    beta = Cov(Y, r) / Var(r)
         = Cov(Y, T - mu) / Var(r)  +  Cov(Y, Delta) / Var(r)
           (weighted effect)           (misspecification bias)

and Var(r) = Var(T - mu) + Var(Delta) + 2 Cov(T - mu, Delta).  The NRWE is
Cov(Y, T - mu) / Var(T - mu); attenuation is NRWE minus the weighted effect.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import trapezoid

from .condmean import Binning, CondMeanModel, make_binning
from .core import DEGENERATE_RATIO, DataMatrix, cov, fwl_residualize, project_treatment, var
from .errors import DegenerateCell, DegenerateTreatment, DimensionMismatch
from .weights import GridSpec, conditional_weight_field

MuSource = Union[CondMeanModel, Callable[[np.ndarray], np.ndarray], np.ndarray]

FIELDS = ("beta", "weighted_effect", "misspec_bias", "nrwe", "attenuation", "denom_ols",
          "e_var_t_given_x", "var_delta", "cross_term")


@dataclass(frozen=True)
class Decomposition:
    beta: float
    weighted_effect: float
    misspec_bias: float
    nrwe: float
    attenuation: float
    denom_ols: float
    e_var_t_given_x: float
    var_delta: float
    cross_term: float
    mu_source: str

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_header(self):
        return FIELDS + ("mu_source",)

    def csv_row(self):
        return [getattr(self, f) for f in FIELDS] + [self.mu_source]


def _resolve_mu(data: DataMatrix, mu: MuSource) -> tuple[np.ndarray, str]:
    if isinstance(mu, CondMeanModel):
        return mu.predict(data), f"estimated({mu.method})"
    if callable(mu):
        values = np.asarray(mu(data.x), dtype=float)
        source = "oracle"
    else:
        values = np.asarray(mu, dtype=float)
        source = "oracle"
    if values.shape != (data.n,):
        raise DimensionMismatch(f"mu has shape {values.shape}, expected ({data.n},)")
    if not np.all(np.isfinite(values)):
        raise DimensionMismatch("mu has non-finite values")
    return values, source


def decompose(data: DataMatrix, mu: MuSource) -> Decomposition:
    """Decompose the coefficient on T given a conditional-mean source.

    ``mu`` is a fitted :class:`CondMeanModel`, a callable of the control
    matrix, or an array of mu(X_i) values (the latter two are reported as
    an oracle source).
    """
    mu_values, source = _resolve_mu(data, mu)
    fit = project_treatment(data)
    r, beta = fwl_residualize(data, fit)
    innov = data.t - mu_values
    delta = mu_values - fit.fitted
    e_var = var(innov)
    if e_var < DEGENERATE_RATIO * var(data.t):
        raise DegenerateTreatment(f"Var(T - mu(X)) = {e_var:.3g} is negligible")
    denom = var(r)
    cov_y_innov = cov(data.y, innov)
    weighted = cov_y_innov / denom
    misspec = cov(data.y, delta) / denom
    nrwe = cov_y_innov / e_var
    return Decomposition(
        beta=beta, weighted_effect=weighted, misspec_bias=misspec, nrwe=nrwe,
        attenuation=nrwe - weighted, denom_ols=denom, e_var_t_given_x=e_var,
        var_delta=var(delta), cross_term=2.0 * cov(innov, delta), mu_source=source)


# -- local (cell-level) form -------------------------------------------------

@dataclass(frozen=True)
class LocalDecomposition:
    cell_ids: list
    cell_mass: np.ndarray
    beta_x: np.ndarray
    w1_x: np.ndarray
    beta_delta: float
    w0: float
    recombined_beta: float
    e_var_t_given_x: float
    var_delta: float

    def total_weight(self) -> float:
        return float(self.w0 + np.sum(self.w1_x * self.cell_mass))

    def to_dict(self) -> dict:
        return {
            "recombined_beta": self.recombined_beta, "beta_delta": self.beta_delta,
            "w0": self.w0, "e_var_t_given_x": self.e_var_t_given_x,
            "var_delta": self.var_delta, "total_weight": self.total_weight(),
            "cells": [{"cell": c, "mass": m, "beta_x": b, "w1_x": w}
                      for c, m, b, w in zip(self.cell_ids, self.cell_mass,
                                            self.beta_x, self.w1_x)],
        }


def local_decompose(data: DataMatrix, mu: CondMeanModel,
                    cells: Optional[Union[Binning, int]] = None) -> LocalDecomposition:
    """Write beta as a variance-weighted mean of within-cell slopes plus a Delta term.

    ``cells`` is a :class:`Binning`, a bin count, or ``None`` to use the
    model's own cells (or the default binning).
    """
    if isinstance(cells, Binning):
        binning = cells
    elif cells is None and mu.binning is not None:
        binning = mu.binning
    else:
        binning = make_binning(data, cells)
    binning.check_floor(10)
    c = binning.cell_of
    nc = binning.counts
    mt = np.bincount(c, weights=data.t, minlength=binning.n_cells) / nc
    my = np.bincount(c, weights=data.y, minlength=binning.n_cells) / nc
    dt = data.t - mt[c]
    vt = np.bincount(c, weights=dt * dt, minlength=binning.n_cells) / nc
    cty = np.bincount(c, weights=dt * (data.y - my[c]), minlength=binning.n_cells) / nc
    flat = np.flatnonzero(vt <= DEGENERATE_RATIO * max(var(data.t), 1e-300))
    if len(flat):
        ids = [binning.cell_ids()[i] for i in flat]
        raise DegenerateCell(f"{len(ids)} cell(s) with zero treatment variance", ids)
    mass = nc / data.n
    beta_x = cty / vt
    e_var = float(np.sum(mass * vt))
    delta = mu.predict(data) - project_treatment(data).fitted
    v_delta = var(delta)
    denom = e_var + v_delta
    w1 = vt / denom
    w0 = v_delta / denom
    beta_delta = cov(data.y, delta) / v_delta if v_delta > 0 else 0.0
    recombined = float(np.sum(mass * beta_x * w1) + beta_delta * w0)
    return LocalDecomposition(binning.cell_ids(), mass, beta_x, w1, beta_delta, w0,
                              recombined, e_var, v_delta)


# -- weight-form NRWE (cross-check) -----------------------------------------

def nrwe_weight_form(data: DataMatrix, mu: CondMeanModel, bins: Optional[int] = None,
                     t_points: int = 48) -> float:
    """NRWE by quadrature of d/dt E[Y|t, cell] against the NRWE weight field.

    The derivative is a central finite difference of within-cell binned
    means of Y on each cell's t-grid; empty t-bins are filled by linear
    interpolation.  Only meant as a rough check of the moment form.
    """
    grid = GridSpec(points=t_points, lower_q=0.0, upper_q=1.0, extend=False)
    wf = conditional_weight_field(data, mu, "nrwe", bins=bins, grid_spec=grid)
    binning = mu.binning if mu.binning is not None else make_binning(data, bins)
    total = 0.0
    for i in range(binning.n_cells):
        curve = wf.weights(i)
        g = curve.grid
        if len(g) < 3:
            continue
        sel = binning.cell_of == i
        tc, yc = data.t[sel], data.y[sel]
        edges = np.concatenate([[g[0]], 0.5 * (g[1:] + g[:-1]), [g[-1]]])
        idx = np.clip(np.searchsorted(edges, tc, side="right") - 1, 0, len(g) - 1)
        cnt = np.bincount(idx, minlength=len(g))
        sm = np.bincount(idx, weights=yc, minlength=len(g))
        have = cnt > 0
        m = np.interp(g, g[have], sm[have] / cnt[have])
        deriv = np.gradient(m, g)
        total += wf.cell_mass[i] * float(trapezoid(deriv * curve.values, g))
    return total
