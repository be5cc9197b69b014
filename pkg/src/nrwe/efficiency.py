"""Grid checks of the efficiency bound V(a) and of uniqueness of the NRWE weights.

Everything lives on a tensor grid ``t_grid x x_grid`` with trapezoid weights
in t and trapezoid (or user-supplied point-mass) weights in x.  A weight
function ``a(t, x)`` is paired with ``k = -da/dt``; the bound under
homoskedastic outcome noise is ``V(a) = sigma2 * sum k^2 / f``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre
from scipy.integrate import cumulative_trapezoid
from scipy.stats import norm

from .errors import (ConfigError, DegenerateDensity, InputError, ProjectionFailure,
                     SupportViolation)
from .rng import Stream

TRUNCATE = 1e-12
MASS_TOL = 1e-6
BOUNDARY_TOL = 1e-8
K_MASS_TOL = 1e-6
K_MOMENT_TOL = 1e-4
PASS_TOL = 1e-8
#: |k| off the support, relative to max |k|, tolerated as differencing noise.
SUPPORT_TOL = 1e-8
PROBE_TOL = 1e-6
PROJECTION_ITERS = 100
PROJECTION_TOL = 1e-10


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if len(g) == 1:
        return np.ones(1)
    d = np.diff(g)
    w = np.zeros_like(g)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def _increasing(name, g):
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or len(g) < 1 or np.any(np.diff(g) <= 0) or not np.all(np.isfinite(g)):
        raise ConfigError(f"{name} must be a finite, strictly increasing 1-d array")
    return g


class GridDensity:
    """Joint density f(t, x) tabulated on a grid, normalized to unit mass.

    Values below ``TRUNCATE * max f`` are set to zero and define the edge of
    the support.  ``wx`` defaults to trapezoid weights; pass explicit weights
    for point masses in x.
    """

    def __init__(self, t_grid, x_grid, f, wx=None):
        self.t = _increasing("t_grid", t_grid)
        self.x = _increasing("x_grid", x_grid)
        if len(self.t) < 3:
            raise ConfigError("t_grid needs at least 3 points")
        f = np.array(f, dtype=float)
        if f.shape != (len(self.t), len(self.x)):
            raise ConfigError(f"f has shape {f.shape}, grids imply {(len(self.t), len(self.x))}")
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise DegenerateDensity("density values must be finite and non-negative")
        self.wt = trapezoid_weights(self.t)
        self.wx = trapezoid_weights(self.x) if wx is None else np.asarray(wx, dtype=float)
        if self.wx.shape != self.x.shape or np.any(self.wx < 0):
            raise ConfigError("wx must be non-negative, one weight per x point")
        top = f.max()
        if not top > 0:
            raise DegenerateDensity("density is identically zero")
        f[f < TRUNCATE * top] = 0.0
        self.f = f / self.integrate(f)
        self.fx = self.wt @ self.f
        if np.any(self.fx <= 0):
            raise DegenerateDensity("marginal density of X vanishes at some x-grid point")
        self.mu = (self.wt @ (self.t[:, None] * self.f)) / self.fx
        self.var_t_given_x = (self.wt @ ((self.t[:, None] - self.mu) ** 2 * self.f)) / self.fx
        self.e_var = float(self.wx @ (self.fx * self.var_t_given_x))

    @property
    def shape(self):
        return self.f.shape

    @property
    def support(self) -> np.ndarray:
        return self.f > 0

    def integrate(self, m: np.ndarray) -> float:
        return float(self.wt @ m @ self.wx)

    def header(self) -> dict:
        return {"kind": "density", "t_grid": self.t.tolist(), "x_grid": self.x.tolist(),
                "wx": self.wx.tolist(), "truncate": TRUNCATE, "mass_tol": MASS_TOL,
                "e_var_t_given_x": self.e_var}

    def save(self, path) -> None:
        _save_matrix(path, self.header(), self.f)

    @classmethod
    def load(cls, path) -> "GridDensity":
        head, f = _load_matrix(path)
        return cls(head["t_grid"], head["x_grid"], f, head.get("wx"))


def gaussian_density(mean_fn: Callable, sd_fn: Callable, x_grid, n_t: int = 512,
                     span: float = 7.5, wx=None, fx_fn: Optional[Callable] = None) -> GridDensity:
    """T | X = x ~ N(mean_fn(x), sd_fn(x)^2) on a common t-grid covering ``span`` sds."""
    x = _increasing("x_grid", x_grid)
    m = np.broadcast_to(np.asarray(mean_fn(x), dtype=float), x.shape)
    s = np.broadcast_to(np.asarray(sd_fn(x), dtype=float), x.shape)
    if np.any(s <= 0):
        raise DegenerateDensity("conditional sd must be positive")
    t = np.linspace(float(np.min(m - span * s)), float(np.max(m + span * s)), n_t)
    f = norm.pdf(t[:, None], m, s)
    if fx_fn is not None:
        f = f * np.asarray(fx_fn(x), dtype=float)
    return GridDensity(t, x, f, wx)


def default_density(n_t: int = 512, n_x: int = 64) -> GridDensity:
    """Heteroskedastic Gaussian design with X ~ U(0, 1) and a nonlinear conditional mean."""
    return gaussian_density(lambda x: 0.8 * x - 0.4 + 0.3 * np.sin(2 * np.pi * x),
                            lambda x: 0.6 + 0.8 * x, np.linspace(0.0, 1.0, n_x), n_t)


def parse_grid(text: str) -> tuple[int, int]:
    """``"512x64"`` -> ``(512, 64)``."""
    parts = text.lower().split("x")
    try:
        nt, nx = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid must look like 512x64, got {text!r}") from None
    if nt < 3 or nx < 1:
        raise ConfigError(f"grid {text!r} too small")
    return nt, nx


# -- weight grids ------------------------------------------------------------

def _reverse_cumulative(k: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``a(t) = int_t^top k(u) du`` by trapezoid, column-wise."""
    return cumulative_trapezoid(k[::-1], x=-t[::-1], axis=0, initial=0)[::-1]


@dataclass(frozen=True)
class WeightGrid:
    """A weight function ``a`` and its ``k = -da/dt`` on a density's grid."""

    a: np.ndarray
    k: np.ndarray
    t: np.ndarray

    @classmethod
    def from_a(cls, a, t) -> "WeightGrid":
        """Derive ``k`` by central differences (second-order one-sided at the ends)."""
        a = np.asarray(a, dtype=float)
        return cls(a, -np.gradient(a, t, axis=0, edge_order=2), np.asarray(t, dtype=float))

    @classmethod
    def from_k(cls, k, t) -> "WeightGrid":
        """Keep ``k`` exact and integrate it down from the top of the t-grid."""
        k = np.asarray(k, dtype=float)
        t = np.asarray(t, dtype=float)
        return cls(_reverse_cumulative(k, t), k, t)

    def checks(self, density: GridDensity) -> dict:
        scale = float(np.max(np.abs(self.a))) or 1.0
        edge = np.r_[self.a[0], self.a[-1]]
        t_edge = np.r_[self.t[0] * self.a[0], self.t[-1] * self.a[-1]]
        boundary = float(max(np.max(np.abs(edge)), np.max(np.abs(t_edge)))) / scale
        mass = density.integrate(self.a)
        k_mass = float(np.max(np.abs(density.wt @ self.k)))
        k_moment = density.integrate(self.t[:, None] * self.k)
        return {
            "boundary": boundary, "boundary_ok": boundary <= BOUNDARY_TOL,
            "mass": mass, "mass_ok": abs(mass - 1.0) <= MASS_TOL,
            "k_mass_max": k_mass, "k_mass_ok": k_mass <= K_MASS_TOL,
            "k_moment": k_moment, "k_moment_ok": abs(k_moment - 1.0) <= K_MOMENT_TOL,
        }

    def header(self) -> dict:
        return {"kind": "weights", "t_grid": self.t.tolist(), "boundary_tol": BOUNDARY_TOL,
                "mass_tol": MASS_TOL}

    def save(self, path) -> None:
        """Writes ``a``; ``k`` is re-derived by finite differences on load."""
        _save_matrix(path, self.header(), self.a)

    @classmethod
    def load(cls, path) -> "WeightGrid":
        head, a = _load_matrix(path)
        return cls.from_a(a, np.asarray(head["t_grid"], dtype=float))


def nrwe_star_weights(density: GridDensity) -> WeightGrid:
    """``a*(t, x) = int_t^inf (u - mu(x)) f(u, x) du / E_X[Var(T|X)]``."""
    if not density.e_var > 0:
        raise DegenerateDensity(f"E_X[Var(T|X)] = {density.e_var:.3g} is not positive")
    k = (density.t[:, None] - density.mu) * density.f / density.e_var
    return WeightGrid.from_k(k, density.t)


def variance_bound(w: WeightGrid, density: GridDensity, sigma2: float) -> float:
    """``sigma2 * sum k^2 / f`` over the support; ``k`` must vanish off it.

    Off-support ``|k|`` up to ``SUPPORT_TOL * max |k|`` (finite-difference
    spill at the truncation edge) is ignored.
    """
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be non-negative, got {sigma2}")
    sup = density.support
    k = w.k
    off = np.abs(k[~sup])
    if off.size and off.max() > SUPPORT_TOL * max(float(np.max(np.abs(k))), 1e-300):
        raise SupportViolation(f"k = {off.max():.3g} where the density is zero")
    ratio = np.zeros_like(k)
    ratio[sup] = k[sup] ** 2 / density.f[sup]
    return float(sigma2 * density.integrate(ratio))


# -- perturbations -----------------------------------------------------------

def _scaled(g):
    return 2.0 * (g - g[0]) / (g[-1] - g[0]) - 1.0 if len(g) > 1 else np.zeros_like(g)


def random_perturbation(density: GridDensity, stream: Stream, degree: int = 4) -> np.ndarray:
    """``f * p`` with ``p`` a random Legendre polynomial in (t, x)."""
    coef = stream.normal((degree + 1) ** 2).reshape(degree + 1, degree + 1)
    coef /= (1.0 + np.add.outer(np.arange(degree + 1), np.arange(degree + 1)))
    p = legendre.leggrid2d(_scaled(density.t), _scaled(density.x), coef)
    return density.f * p


def project_perturbation(dk: np.ndarray, density: GridDensity) -> np.ndarray:
    """Alternating projection onto {int dk dt = 0 per x} and {sum t dk = 0}.

    Both projections are orthogonal in the inner product weighted by 1/f, so
    they preserve the support of ``dk``.
    """
    f, wt = density.f, density.wt
    direction = (density.t[:, None] - density.mu) * f
    d_norm = density.integrate(density.t[:, None] * direction)
    dk = dk.copy()
    for _ in range(PROJECTION_ITERS):
        dk -= f * ((wt @ dk) / density.fx)
        dk -= direction * (density.integrate(density.t[:, None] * dk) / d_norm)
        scale = float(np.max(np.abs(dk))) or 1.0
        res1 = float(np.max(np.abs(wt @ dk))) / scale
        res2 = abs(density.integrate(density.t[:, None] * dk)) / scale
        if max(res1, res2) <= PROJECTION_TOL:
            return dk
    raise ProjectionFailure(
        f"constraint projection did not reach {PROJECTION_TOL:g} in {PROJECTION_ITERS} iterations")


def minimizer_check(density: GridDensity, sigma2: float = 1.0, n_perturbations: int = 100,
                    seed: int = 42, size: float = 0.5) -> dict:
    """Compare V at a* against V at constraint-preserving random perturbations.

    Each perturbation ``dk`` is scaled so that ``max |dk| = size * max |k*|``.
    PASS iff every excess ``V(a* + d) - V(a*)`` is at least ``-PASS_TOL``.
    """
    if n_perturbations < 1:
        raise ConfigError("n_perturbations must be at least 1")
    star = nrwe_star_weights(density)
    v_star = variance_bound(star, density, sigma2)
    kmax = float(np.max(np.abs(star.k)))
    excess = np.empty(n_perturbations)
    first = None
    for i in range(n_perturbations):
        dk = project_perturbation(random_perturbation(density, Stream(seed, i)), density)
        dk *= size * kmax / float(np.max(np.abs(dk)))
        if first is None:
            first = dk
        w = WeightGrid.from_k(star.k + dk, density.t)
        excess[i] = variance_bound(w, density, sigma2) - v_star
    base = excess[0]
    scaling = {}
    for eps in (1e-2, 1e-3):
        w = WeightGrid.from_k(star.k + eps * first, density.t)
        e = variance_bound(w, density, sigma2) - v_star
        scaling[format(eps, "g")] = float(e / (eps * eps * base)) if base != 0 else float("nan")
    scaling_ok = all(abs(r - 1.0) <= 0.05 for r in scaling.values())
    self_excess = variance_bound(WeightGrid.from_k(star.k, density.t), density, sigma2) - v_star
    v_formula = sigma2 / density.e_var
    rel = abs(v_star - v_formula) / v_formula if v_formula > 0 else abs(v_star)
    return {
        "sigma2": sigma2, "grid": list(density.shape), "e_var_t_given_x": density.e_var,
        "v_star": v_star, "v_min_formula": v_formula, "v_min_rel_error": rel,
        "v_min_ok": rel <= 1e-4,
        "n_perturbations": n_perturbations, "seed": seed,
        "min_excess": float(excess.min()), "median_excess": float(np.median(excess)),
        "excess": excess.tolist(), "self_excess": self_excess,
        "eps_scaling": scaling, "eps_scaling_ok": scaling_ok,
        "constraints": star.checks(density),
        "pass": bool(np.all(excess >= -PASS_TOL)),
    }


# -- uniqueness probe --------------------------------------------------------

def _bumps(t: np.ndarray, n: int) -> np.ndarray:
    """``n`` smooth compactly supported bumps spread over the t-grid, peak 1."""
    centers = np.linspace(t[0], t[-1], n + 2)[1:-1]
    half = 2.0 * (centers[1] - centers[0]) if n > 1 else 0.5 * (t[-1] - t[0])
    s = (t[None, :] - centers[:, None]) / half
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _x_basis(x: np.ndarray, n: int) -> tuple[np.ndarray, list]:
    """Indicators of ``n`` contiguous blocks of x-points plus Legendre P0..P3."""
    blocks = np.array_split(np.arange(len(x)), min(n, len(x)))
    rows, labels = [], []
    for j, b in enumerate(blocks):
        r = np.zeros(len(x))
        r[b] = 1.0
        rows.append(r)
        labels.append(f"indicator[{x[b[0]]:.6g},{x[b[-1]]:.6g}]")
    xs = _scaled(x)
    for d in range(4):
        rows.append(legendre.legval(xs, np.eye(d + 1)[d]))
        labels.append(f"legendre{d}")
    return np.array(rows), labels


def uniqueness_probe(w: WeightGrid, density: GridDensity, basis_size: int = 16) -> dict:
    """Scan ``D_ij = sum phi_i(t) g_j(x) (a - a*)`` over bumps and an x-basis.

    PASS iff ``max |D| <= PROBE_TOL``; otherwise the largest entry is the
    witness.
    """
    if basis_size < 1:
        raise ConfigError("basis_size must be positive")
    mass = density.integrate(w.a)
    star = nrwe_star_weights(density)
    diff = (w.a - star.a) * density.wt[:, None] * density.wx
    phi = _bumps(density.t, basis_size)
    g, labels = _x_basis(density.x, basis_size)
    d = phi @ diff @ g.T
    i, j = np.unravel_index(int(np.argmax(np.abs(d))), d.shape)
    worst = float(abs(d[i, j]))
    ok = worst <= PROBE_TOL
    return {
        "mass": mass, "mass_ok": abs(mass - 1.0) <= MASS_TOL,
        "n_tests": int(d.size), "max_abs_discrepancy": worst, "pass": ok,
        "witness": None if ok else {"bump": int(i), "x_function": labels[j],
                                    "discrepancy": float(d[i, j])},
    }


def per_x_normalized_weights(density: GridDensity) -> WeightGrid:
    """Conditional weights normalized within each x, then mixed by f_X."""
    star = nrwe_star_weights(density)
    per_x = density.wt @ star.a
    scale = density.fx / per_x
    return WeightGrid.from_k(star.k * scale, density.t)


def ripple_weights(density: GridDensity, amplitude: float = 0.1, cycles: float = 2.0) -> WeightGrid:
    """a* plus ``amplitude * max a* * f(t|x) sin(cycles-scaled (t - mu) / sd) / max``.

    The ripple is odd about mu(x), so it integrates to zero in t and keeps
    the total mass.
    """
    star = nrwe_star_weights(density)
    sd = np.sqrt(density.var_t_given_x)
    z = (density.t[:, None] - density.mu) / sd
    cond = density.f / density.fx
    r = cond * np.sin(np.pi * z / cycles)
    r *= amplitude * float(np.max(star.a)) / float(np.max(np.abs(r)))
    # keep it exactly mean-zero in t on the grid
    r -= cond * ((density.wt @ r) / (density.wt @ cond))
    return WeightGrid.from_a(star.a + r, density.t)


# -- matrix files ------------------------------------------------------------

def _save_matrix(path, header: dict, m: np.ndarray) -> None:
    from .io import fmt
    lines = ["# " + json.dumps(header, separators=(",", ":"))]
    lines += [",".join(fmt(v) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_matrix(path) -> tuple[dict, np.ndarray]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    first, _, rest = text.partition("\n")
    if not first.startswith("# "):
        raise InputError(f"{path}:1: expected a '# {{json}}' header line")
    try:
        head = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:1: bad header JSON: {exc.msg}") from None
    rows = []
    for line_no, line in enumerate(rest.splitlines(), start=2):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise InputError(f"{path}:{line_no}: non-numeric value") from None
    if len({len(r) for r in rows}) > 1:
        raise InputError(f"{path}: ragged matrix rows")
    return head, np.array(rows, dtype=float)
