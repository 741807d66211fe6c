"""Cubic polynomial surface alpha(T, xi) and the alpha_ave level metric."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import scipy.linalg

from .boundary import BoundaryMesh
from .errors import ComparisonError, FitError, InvalidArgumentError, MetricError

BASIS_NAME = "cubic-T-xi"
BASIS_TERMS = ("1", "T", "xi", "T^2", "T*xi", "xi^2", "T^3", "T^2*xi", "T*xi^2", "xi^3")
N_COEFFS = len(BASIS_TERMS)
SS_TOT_EPS = 1e-28


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Region:
    """Closed box ``T_bounds x xi_bounds``."""

    T_bounds: tuple[float, float] = (0.0, 1.0)
    xi_bounds: tuple[float, float] = (0.0, math.inf)

    def __post_init__(self) -> None:
        T_b = tuple(float(v) for v in self.T_bounds)
        xi_b = tuple(float(v) for v in self.xi_bounds)
        if len(T_b) != 2 or len(xi_b) != 2 or T_b[0] > T_b[1] or xi_b[0] > xi_b[1]:
            raise InvalidArgumentError(f"invalid region bounds {T_b}, {xi_b}")
        object.__setattr__(self, "T_bounds", T_b)
        object.__setattr__(self, "xi_bounds", xi_b)

    def contains(self, T, xi):
        T = np.asarray(T)
        xi = np.asarray(xi)
        return (
            (T >= self.T_bounds[0]) & (T <= self.T_bounds[1]) & (xi >= self.xi_bounds[0]) & (xi <= self.xi_bounds[1])
        )

    def to_dict(self) -> dict[str, list[float | None]]:
        def enc(v: float) -> float | None:
            return None if math.isinf(v) else v

        return {"T": [enc(v) for v in self.T_bounds], "xi": [enc(v) for v in self.xi_bounds]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Region:
        T = [(-math.inf if i == 0 else math.inf) if v is None else v for i, v in enumerate(d["T"])]
        xi = [(-math.inf if i == 0 else math.inf) if v is None else v for i, v in enumerate(d["xi"])]
        return cls(tuple(T), tuple(xi))


def design_matrix(T, xi) -> np.ndarray:
    T = np.asarray(T, dtype=float).ravel()
    x = np.asarray(xi, dtype=float).ravel()
    return np.column_stack([np.ones_like(T), T, x, T * T, T * x, x * x, T**3, T * T * x, T * x * x, x**3])


@dataclass(frozen=True)
class PolySurface:
    coeffs: tuple[float, ...]
    r_square: float
    region: Region
    protocol: str = ""
    config_hash: str | None = None

    def __post_init__(self) -> None:
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != N_COEFFS or not all(math.isfinite(c) for c in coeffs):
            raise InvalidArgumentError(f"need {N_COEFFS} finite coefficients")
        if not self.r_square <= 1.0 + 1e-12:
            raise InvalidArgumentError(f"r_square must be <= 1, got {self.r_square}")
        object.__setattr__(self, "coeffs", coeffs)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "protocol": self.protocol,
            "basis": BASIS_NAME,
            "coeffs": list(self.coeffs),
            "r_square": self.r_square,
            "region": self.region.to_dict(),
        }
        if self.config_hash is not None:
            out["config_hash"] = self.config_hash
        return out

    def to_json(self) -> str:
        # json writes floats with repr, i.e. round-trip exact
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PolySurface:
        if d.get("basis") != BASIS_NAME:
            raise InvalidArgumentError(f"unsupported surface basis {d.get('basis')!r}")
        return cls(tuple(d["coeffs"]), float(d["r_square"]), Region.from_dict(d["region"]), d.get("protocol", ""), d.get("config_hash"))

    @classmethod
    def from_json(cls, text: str) -> PolySurface:
        return cls.from_dict(json.loads(text))


def _deficient_terms(A: np.ndarray) -> tuple[str, ...]:
    norms = np.linalg.norm(A, axis=0)
    zero = norms == 0
    scaled = A / np.where(zero, 1.0, norms)
    _, R, piv = scipy.linalg.qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0) * 1e3
    rank = int(np.sum(diag > tol))
    bad = set(piv[rank:].tolist()) | set(np.flatnonzero(zero).tolist())
    return tuple(BASIS_TERMS[k] for k in sorted(bad))


def r_squared(y: np.ndarray, fitted: np.ndarray) -> float:
    """Coefficient of determination; constant data counts as a perfect fit."""
    resid = y - fitted
    ss_res = float(resid @ resid)
    dev = y - y.mean()
    ss_tot = float(dev @ dev)
    if ss_tot <= SS_TOT_EPS * y.size * max(1.0, float(y.mean()) ** 2):
        return 1.0
    return 1.0 - ss_res / ss_tot


def fit_points(T, xi, alpha, region: Region, protocol: str = "") -> PolySurface:
    T = np.asarray(T, dtype=float)
    xi = np.asarray(xi, dtype=float)
    y = np.asarray(alpha, dtype=float)
    if y.size < N_COEFFS:
        raise FitError(f"need at least {N_COEFFS} present cells in the region, got {y.size}")
    A = design_matrix(T, xi)
    bad = _deficient_terms(A)
    if bad:
        raise FitError(f"rank-deficient design; unresolvable terms: {', '.join(bad)}", bad)
    coeffs, *_ = np.linalg.lstsq(A, y, rcond=None)
    return PolySurface(tuple(coeffs), r_squared(y, A @ coeffs), region, protocol)


def fit_surface(mesh: BoundaryMesh, region: Region | None = None) -> PolySurface:
    """Unweighted least-squares cubic fit over present cells inside ``region``.

    Absent (cut-off) cells are left out rather than imputed.
    """
    region = region or Region()
    T, xi, alpha = mesh.points()
    keep = region.contains(T, xi)
    return fit_points(T[keep], xi[keep], alpha[keep], region, mesh.protocol)


def evaluate_surface(s: PolySurface, T, xi):
    """Evaluate the cubic; warns with :class:`ExtrapolationWarning` outside the fit region."""
    if not np.all(s.region.contains(T, xi)):
        warnings.warn(f"evaluating {s.protocol or 'surface'} outside its fit region", ExtrapolationWarning, stacklevel=2)
    Tb, xb = np.broadcast_arrays(np.asarray(T, float), np.asarray(xi, float))
    vals = design_matrix(Tb, xb) @ np.asarray(s.coeffs)
    return float(vals[0]) if Tb.ndim == 0 else vals.reshape(Tb.shape)


@dataclass(frozen=True)
class LevelMetric:
    alpha_ave: float
    region: Region
    cell_count: int
    protocol: str = ""


def alpha_ave(mesh: BoundaryMesh, region: Region | None = None) -> LevelMetric:
    """Mean boundary alpha over present mesh cells inside ``region``."""
    region = region or Region()
    T, xi, alpha = mesh.points()
    vals = alpha[region.contains(T, xi)]
    if vals.size == 0:
        raise MetricError(f"no present cells of {mesh.protocol} inside {region}")
    return LevelMetric(math.fsum(vals) / vals.size, region, int(vals.size), mesh.protocol)


def alpha_ave_surface(s: PolySurface, region: Region, n: int = 201) -> float:
    """Mean of the fitted surface over ``region`` on an n x n midpoint grid.

    Provided for comparison only; the level metric itself is mesh based.
    """
    if not all(math.isfinite(v) for v in (*region.T_bounds, *region.xi_bounds)):
        raise MetricError("surface average needs a bounded region")
    edges_T = np.linspace(*region.T_bounds, n + 1)
    edges_x = np.linspace(*region.xi_bounds, n + 1)
    TT, XX = np.meshgrid(0.5 * (edges_T[1:] + edges_T[:-1]), 0.5 * (edges_x[1:] + edges_x[:-1]), indexing="ij")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        return float(np.mean(evaluate_surface(s, TT, XX)))


def compare_levels(metrics: Sequence[LevelMetric]) -> list[LevelMetric]:
    """Rank by ascending alpha_ave; a lower level means more channels admit a positive key.

    The sort is stable, so equal levels keep their input order.
    """
    metrics = list(metrics)
    if metrics and any(m.region != metrics[0].region for m in metrics[1:]):
        raise ComparisonError("level metrics were computed over different regions")
    return sorted(metrics, key=lambda m: m.alpha_ave)
