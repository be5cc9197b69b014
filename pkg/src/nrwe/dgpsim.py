"""Data-generating processes given as expressions, seeded draws and Monte Carlo runs.

A process is ``T = h(X) + sigma_nu * Z1`` and ``Y = g(T, X) + sigma_eps * Z2``
with scalar ``X`` drawn from a uniform or normal law.  Replication ``r`` of a
run reads stream ``(seed, r)``; within a stream the draw order is X, Z1, Z2.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .condmean import fit_cond_mean
from .core import DataMatrix
from .decomposition import decompose
from .errors import ConfigError, InvalidScale, NrweError, ReplicationFailure
from .expr import Expr, differentiate, evaluate, parse_expr
from .io import dumps, write_csv, write_json
from .rng import GENERATOR_NAME, Stream

log = logging.getLogger(__name__)

X_DISTS = ("uniform", "normal")


@dataclass(frozen=True)
class XDist:
    """``uniform(a, b)`` or ``normal(m, s)``."""

    kind: str
    p1: float
    p2: float

    def __post_init__(self):
        if self.kind not in X_DISTS:
            raise InvalidScale(f"x distribution must be one of {X_DISTS}, got {self.kind!r}")
        if self.kind == "uniform" and not self.p2 > self.p1:
            raise InvalidScale(f"uniform({self.p1}, {self.p2}) needs b > a")
        if self.kind == "normal" and not self.p2 > 0:
            raise InvalidScale(f"normal sd must be positive, got {self.p2}")

    def draw(self, stream: Stream, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return self.p1 + (self.p2 - self.p1) * stream.uniform(n)
        return self.p1 + self.p2 * stream.normal(n)

    def to_dict(self) -> dict:
        return {self.kind: [self.p1, self.p2]}


@dataclass(frozen=True)
class DgpSpec:
    h_expr: Expr
    g_expr: Expr
    sigma_nu: float = 1.0
    sigma_eps: float = 1.0
    x_dist: XDist = XDist("uniform", 0.0, 5.0)
    seed: int = 42
    h_source: str = ""
    g_source: str = ""
    name: str = "custom"

    def __post_init__(self):
        if not self.sigma_nu > 0:
            raise InvalidScale(f"sigma_nu must be positive, got {self.sigma_nu}")
        if not self.sigma_eps >= 0:
            raise InvalidScale(f"sigma_eps must be non-negative, got {self.sigma_eps}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidScale(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if "t" in self.h_expr.variables():
            raise ConfigError("h may depend on x only")

    @classmethod
    def from_sources(cls, h: str, g: str, sigma_nu=1.0, sigma_eps=1.0,
                     x_dist: XDist = XDist("uniform", 0.0, 5.0), seed=42,
                     name="custom") -> "DgpSpec":
        return cls(parse_expr(h, ("x",)), parse_expr(g, ("t", "x")), float(sigma_nu),
                   float(sigma_eps), x_dist, int(seed), h, g, name)

    def with_seed(self, seed: int) -> "DgpSpec":
        return DgpSpec(self.h_expr, self.g_expr, self.sigma_nu, self.sigma_eps,
                       self.x_dist, int(seed), self.h_source, self.g_source, self.name)

    def h(self, x):
        return np.broadcast_to(evaluate(self.h_expr, {"x": x}), np.shape(x)).astype(float)

    def g(self, t, x):
        return np.broadcast_to(evaluate(self.g_expr, {"t": t, "x": x}),
                               np.shape(t)).astype(float)

    def to_dict(self) -> dict:
        return {"h": self.h_source or str(self.h_expr), "g": self.g_source or str(self.g_expr),
                "sigma_nu": self.sigma_nu, "sigma_eps": self.sigma_eps,
                "x_dist": self.x_dist.to_dict(), "seed": self.seed}

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        if not isinstance(d, dict):
            raise ConfigError("DGP document must be a JSON object")
        unknown = set(d) - {"h", "g", "sigma_nu", "sigma_eps", "x_dist", "seed", "name"}
        if unknown:
            raise ConfigError(f"unknown DGP keys: {sorted(unknown)}")
        for key in ("h", "g"):
            if not isinstance(d.get(key), str):
                raise ConfigError(f"DGP key {key!r} must be an expression string")
        xd = d.get("x_dist", {"uniform": [0.0, 5.0]})
        if not (isinstance(xd, dict) and len(xd) == 1):
            raise ConfigError('x_dist must look like {"uniform": [a, b]} or {"normal": [m, s]}')
        (kind, params), = xd.items()
        if not (isinstance(params, list) and len(params) == 2):
            raise ConfigError(f"x_dist {kind!r} needs two parameters")
        try:
            return cls.from_sources(
                d["h"], d["g"], float(d.get("sigma_nu", 1.0)), float(d.get("sigma_eps", 1.0)),
                XDist(kind, float(params[0]), float(params[1])), int(d.get("seed", 42)),
                str(d.get("name", "custom")))
        except InvalidScale as exc:
            raise ConfigError(str(exc)) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad DGP value: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "DgpSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed DGP JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)


_PRESETS = {
    "table1-row1": ("exp(x)", "sin(t)^2 + x"),
    "table1-row2": ("exp(x)", "t + exp(x)"),
    "table1-row3": ("sin(x)", "sin(x)^2 + x^2"),
}
PRESETS = tuple(_PRESETS)


def preset(name: str, seed: int = 42, sigma: float = 1.0) -> DgpSpec:
    """One of the three simulation designs with X ~ U(0, 5) and unit outcome noise."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    h, g = _PRESETS[name]
    return DgpSpec.from_sources(h, g, sigma, 1.0, XDist("uniform", 0.0, 5.0), seed, name)


def simulate_draws(spec: DgpSpec, n: int, stream: int = 0) -> DataMatrix:
    """Draw ``n`` observations from stream ``(spec.seed, stream)``."""
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    s = Stream(spec.seed, stream)
    x = spec.x_dist.draw(s, n)
    z1 = s.normal(n)
    z2 = s.normal(n)
    t = spec.h(x) + spec.sigma_nu * z1
    y = spec.g(t, x) + spec.sigma_eps * z2
    return DataMatrix.from_columns(y, t, x, names=("x",))


def nrwe_from_derivative_oracle(spec: DgpSpec, data: DataMatrix) -> float:
    """Sample mean of dg/dt at the drawn (T, X)."""
    d = differentiate(spec.g_expr, "t")
    t = data.t
    x = data.x[:, 1]
    return float(np.mean(np.broadcast_to(evaluate(d, {"t": t, "x": x}), t.shape)))


REPORT_COLUMNS = ("rep", "nrwe", "beta", "weighted_effect", "misspec_bias", "nrwe_moment",
                  "attenuation", "denom_ols", "e_var_t_given_x", "var_delta", "cross_term")
ADDITIVE = ("beta", "weighted_effect", "misspec_bias")


@dataclass(frozen=True)
class MonteCarloReport:
    """One row per replication.

    ``nrwe`` is the mean derivative of g in t; ``nrwe_moment`` is the
    covariance-ratio form from the decomposition, and ``attenuation`` is
    ``nrwe_moment - weighted_effect``.
    """

    rows: np.ndarray
    config: dict
    columns: tuple = REPORT_COLUMNS

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    @property
    def means(self) -> dict:
        return {c: float(np.mean(self.column(c))) for c in self.columns[1:]}

    @property
    def sds(self) -> dict:
        return {c: float(np.std(self.column(c), ddof=1)) for c in self.columns[1:]}

    def summary(self) -> dict:
        return {"config": self.config, "means": self.means, "sds": self.sds}

    def write(self, out_dir: Union[str, Path]) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        body = [[int(r[0])] + list(r[1:]) for r in self.rows]
        write_csv(out / "report.csv", self.columns, body)
        write_json(out / "summary.json", self.summary())
        return out / "report.csv", out / "summary.json"


def _replicate(spec: DgpSpec, n: int, rep: int, mu_mode: str, bins) -> list:
    data = simulate_draws(spec, n, stream=rep)
    if mu_mode == "oracle":
        mu = spec.h(data.x[:, 1])
    else:
        mu = fit_cond_mean(data, mu_mode, bins=bins)
    d = decompose(data, mu)
    return [rep, nrwe_from_derivative_oracle(spec, data), d.beta, d.weighted_effect,
            d.misspec_bias, d.nrwe, d.attenuation, d.denom_ols, d.e_var_t_given_x,
            d.var_delta, d.cross_term]


def monte_carlo(spec: DgpSpec, n: int, reps: int, mu_mode: str = "oracle",
                bins: Optional[int] = None, threads: int = 1) -> MonteCarloReport:
    """Run ``reps`` replications of ``n`` draws and decompose each.

    ``mu_mode`` is ``"oracle"`` (mu = h(X)) or a conditional-mean method
    name.  Replications run on up to ``threads`` workers; rows are ordered
    by replication index either way.
    """
    if reps < 2:
        raise ConfigError(f"reps must be at least 2, got {reps}")
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    mu_mode = mu_mode.replace("-", "_")

    def run(rep):
        try:
            return _replicate(spec, n, rep, mu_mode, bins)
        except NrweError as exc:
            raise ReplicationFailure(rep, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, range(reps)))
    else:
        rows = []
        for rep in range(reps):
            rows.append(run(rep))
            log.debug("replication %d done", rep)
    config = {"dgp": spec.name, "spec": spec.to_dict(), "n": n, "reps": reps,
              "seed": spec.seed, "mu_mode": mu_mode, "bins": bins, "generator": GENERATOR_NAME}
    return MonteCarloReport(np.array(rows, dtype=float), config)
