"""Minimum-positive-key-rate boundary over the (T, xi, alpha) box.

For every (T, xi) cell the alpha axis is scanned in ascending order and the
smallest strictly positive key rate is kept; its alpha is the boundary point.
Cells where no alpha gives a positive key are absent and together form the
cut-off region.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .constellation import Constellation, ProtocolSpec
from .engine import (
    ChannelParams,
    Moments,
    ProtocolConfig,
    compute_skr,
    constellation_moments,
    initial_cutoff,
    key_rate_terms,
)
from .errors import AtlasError, ComputationError, InvalidArgumentError, SweepAbortedError

STATUS_OK = "ok"
STATUS_NONE = "none"
STATUS_FAILED = "failed"
CSV_HEADER = ("protocol", "T", "xi", "alpha_min", "skr_at_min", "status")

REFINE_TOL = 1e-4
MAX_FAILED_FRACTION = 0.01

# default sweep ranges
DEFAULT_T_RANGE = (0.0, 1.0)
DEFAULT_XI_RANGE = (0.001, 0.5)
DEFAULT_ALPHA_RANGE = (0.1, 0.5)
DEFAULT_STEPS = (50, 50, 40)

ProgressCallback = Callable[[int, int], None]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else format(float(x), ".17g")


def _axis(lo: float, hi: float, n: int, spacing: str = "linear") -> tuple[float, ...]:
    if spacing == "linear":
        return tuple(float(v) for v in np.linspace(lo, hi, n))
    if spacing == "log":
        return tuple(float(v) for v in np.geomspace(lo, hi, n))
    raise InvalidArgumentError(f"unknown axis spacing {spacing!r}")


@dataclass(frozen=True)
class SweepGrid:
    T_axis: tuple[float, ...]
    xi_axis: tuple[float, ...]
    alpha_axis: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("T_axis", "xi_axis", "alpha_axis"):
            axis = tuple(float(v) for v in getattr(self, name))
            if len(axis) < 2:
                raise InvalidArgumentError(f"{name} needs at least 2 points")
            if not all(math.isfinite(v) for v in axis) or any(b <= a for a, b in zip(axis, axis[1:])):
                raise InvalidArgumentError(f"{name} must be finite and strictly increasing")
            object.__setattr__(self, name, axis)
        if self.T_axis[0] < 0 or self.T_axis[-1] > 1:
            raise InvalidArgumentError("T_axis must lie within [0, 1]")
        if self.xi_axis[0] <= 0:
            raise InvalidArgumentError("xi_axis values must be > 0")
        if self.alpha_axis[0] <= 0:
            raise InvalidArgumentError("alpha_axis values must be > 0")

    @classmethod
    def from_ranges(
        cls,
        T_range: tuple[float, float] = DEFAULT_T_RANGE,
        xi_range: tuple[float, float] = DEFAULT_XI_RANGE,
        alpha_range: tuple[float, float] = DEFAULT_ALPHA_RANGE,
        n_T: int = DEFAULT_STEPS[0],
        n_xi: int = DEFAULT_STEPS[1],
        n_alpha: int = DEFAULT_STEPS[2],
        xi_spacing: str = "linear",
    ) -> SweepGrid:
        return cls(
            _axis(*T_range, n_T),
            _axis(*xi_range, n_xi, xi_spacing),
            _axis(*alpha_range, n_alpha),
        )

    @classmethod
    def default(cls) -> SweepGrid:
        return cls.from_ranges()

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.T_axis), len(self.xi_axis)

    @property
    def alpha_step(self) -> float:
        return float(np.max(np.diff(self.alpha_axis)))


@dataclass(frozen=True)
class BoundaryPoint:
    alpha_min: float
    skr_at_min: float
    alpha_crossing: float | None = None

    @property
    def refined(self) -> bool:
        return self.alpha_crossing is not None


@dataclass(frozen=True)
class ScanResult:
    alpha_min: float
    skr_min: float
    index: int


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Per-(T, xi) boundary points.

    ``alpha_min`` and ``skr_at_min`` are NaN wherever ``status`` is not
    ``"ok"``.  ``alpha_crossing`` holds the bisected zero crossing where a
    sweep ran with refinement, NaN otherwise; it is not part of the CSV.
    """

    protocol: str
    grid: SweepGrid
    alpha_min: np.ndarray
    skr_at_min: np.ndarray
    status: np.ndarray
    alpha_crossing: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        shape = self.grid.shape
        if self.alpha_crossing is None:
            object.__setattr__(self, "alpha_crossing", np.full(shape, np.nan))
        for name in ("alpha_min", "skr_at_min", "status", "alpha_crossing"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise InvalidArgumentError(f"{name} has shape {arr.shape}, grid is {shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ok = self.status == STATUS_OK
        if np.any(~ok & ~np.isnan(self.alpha_min)):
            raise InvalidArgumentError("absent cells must not carry an alpha value")
        if np.any(ok & ~(self.skr_at_min > 0)):
            raise InvalidArgumentError("present cells must have a positive key rate")
        lo, hi = self.grid.alpha_axis[0], self.grid.alpha_axis[-1]
        if np.any(ok & ((self.alpha_min < lo) | (self.alpha_min > hi))):
            raise InvalidArgumentError("alpha_min outside the alpha axis")

    @property
    def present(self) -> np.ndarray:
        return self.status == STATUS_OK

    @property
    def failed(self) -> np.ndarray:
        return self.status == STATUS_FAILED

    def counts(self) -> dict[str, int]:
        return {s: int(np.sum(self.status == s)) for s in (STATUS_OK, STATUS_NONE, STATUS_FAILED)}

    def cell(self, i: int, j: int) -> BoundaryPoint | None:
        if self.status[i, j] != STATUS_OK:
            return None
        crossing = self.alpha_crossing[i, j]
        return BoundaryPoint(
            float(self.alpha_min[i, j]),
            float(self.skr_at_min[i, j]),
            None if math.isnan(crossing) else float(crossing),
        )

    def nearest_index(self, T: float, xi: float) -> tuple[int, int]:
        i = int(np.argmin(np.abs(np.asarray(self.grid.T_axis) - T)))
        j = int(np.argmin(np.abs(np.asarray(self.grid.xi_axis) - xi)))
        return i, j

    def points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (T, xi, alpha_min) of present cells, row-major."""
        TT, XX = np.meshgrid(self.grid.T_axis, self.grid.xi_axis, indexing="ij")
        mask = self.present
        return TT[mask], XX[mask], self.alpha_min[mask]

    def identical_to(self, other: BoundaryMesh) -> bool:
        return (
            self.protocol == other.protocol
            and self.grid == other.grid
            and np.array_equal(self.status, other.status)
            and np.array_equal(self.alpha_min, other.alpha_min, equal_nan=True)
            and np.array_equal(self.skr_at_min, other.skr_at_min, equal_nan=True)
        )

    # -- CSV ---------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i, T in enumerate(self.grid.T_axis):
            for j, xi in enumerate(self.grid.xi_axis):
                writer.writerow(
                    (self.protocol, _fmt(T), _fmt(xi), _fmt(self.alpha_min[i, j]), _fmt(self.skr_at_min[i, j]), self.status[i, j])
                )
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str, alpha_axis: Sequence[float] | None = None) -> BoundaryMesh:
        """Parse a mesh CSV.

        The alpha axis is not stored in the CSV; pass it explicitly (the CLI
        reads it from the run manifest) or it is inferred from the distinct
        ``alpha_min`` values.
        """
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise InvalidArgumentError(f"mesh CSV header must be {','.join(CSV_HEADER)}")
        rows = [r for r in reader if r]
        if not rows:
            raise InvalidArgumentError("mesh CSV has no rows")
        protocols = {r[0] for r in rows}
        if len(protocols) != 1:
            raise InvalidArgumentError(f"mesh CSV mixes protocols {sorted(protocols)}")
        T_axis = list(dict.fromkeys(float(r[1]) for r in rows))
        xi_axis = list(dict.fromkeys(float(r[2]) for r in rows))
        if len(rows) != len(T_axis) * len(xi_axis):
            raise InvalidArgumentError("mesh CSV rows do not form a full T x xi grid")
        shape = (len(T_axis), len(xi_axis))
        alpha = np.full(shape, np.nan)
        skr = np.full(shape, np.nan)
        status = np.empty(shape, dtype=object)
        for k, r in enumerate(rows):
            i, j = divmod(k, shape[1])
            if float(r[1]) != T_axis[i] or float(r[2]) != xi_axis[j]:
                raise InvalidArgumentError(f"mesh CSV row {k + 2} out of grid order")
            if r[5] not in (STATUS_OK, STATUS_NONE, STATUS_FAILED):
                raise InvalidArgumentError(f"bad status {r[5]!r} on row {k + 2}")
            status[i, j] = r[5]
            if r[5] == STATUS_OK:
                alpha[i, j] = float(r[3])
                skr[i, j] = float(r[4])
        if alpha_axis is None:
            vals = np.unique(alpha[~np.isnan(alpha)])
            if vals.size < 2:
                raise InvalidArgumentError("cannot infer the alpha axis; supply it explicitly")
            alpha_axis = vals
        grid = SweepGrid(tuple(T_axis), tuple(xi_axis), tuple(alpha_axis))
        return cls(rows[0][0], grid, alpha, skr, status.astype(str))

    @classmethod
    def read_csv(cls, path: str | os.PathLike, alpha_axis: Sequence[float] | None = None) -> BoundaryMesh:
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), alpha_axis)

    def to_dict(self) -> dict:
        cells = []
        for i, T in enumerate(self.grid.T_axis):
            for j, xi in enumerate(self.grid.xi_axis):
                pt = self.cell(i, j)
                cells.append(
                    {
                        "T": T,
                        "xi": xi,
                        "status": str(self.status[i, j]),
                        "alpha_min": None if pt is None else pt.alpha_min,
                        "skr_at_min": None if pt is None else pt.skr_at_min,
                        "alpha_crossing": None if pt is None else pt.alpha_crossing,
                    }
                )
        return {
            "protocol": self.protocol,
            "grid": {
                "T_axis": list(self.grid.T_axis),
                "xi_axis": list(self.grid.xi_axis),
                "alpha_axis": list(self.grid.alpha_axis),
            },
            "cells": cells,
        }


# --------------------------------------------------------------------------
# scan and refinement

def select_min_positive(alpha_axis: Sequence[float], skr_values: Iterable[float]) -> ScanResult | None:
    """Keep the smallest strictly positive key rate in ascending-alpha order.

    A new value replaces the running minimum only if it is positive and
    strictly smaller, so ties keep the smaller alpha.
    """
    best: ScanResult | None = None
    for k, (alpha, s) in enumerate(zip(alpha_axis, skr_values)):
        s = float(s)
        if math.isnan(s):
            raise ComputationError(f"NaN key rate at alpha={alpha}")
        if s > 0 and (best is None or s < best.skr_min):
            best = ScanResult(float(alpha), s, k)
    return best


def _as_generator(protocol: ProtocolSpec | Callable[[float], Constellation]) -> Callable[[float], Constellation]:
    return protocol.build if isinstance(protocol, ProtocolSpec) else protocol


def min_positive_scan(
    protocol: ProtocolSpec | Callable[[float], Constellation],
    ch: ChannelParams,
    alpha_axis: Sequence[float],
    cfg: ProtocolConfig | None = None,
) -> ScanResult | None:
    """Minimum positive key rate over ``alpha_axis`` for one channel, or None."""
    cfg = cfg or ProtocolConfig()
    if len(alpha_axis) == 0 or any(b <= a for a, b in zip(alpha_axis, alpha_axis[1:])):
        raise InvalidArgumentError("alpha_axis must be non-empty and ascending")
    build = _as_generator(protocol)
    rates = [compute_skr(build(a), ch, cfg).skr for a in alpha_axis]
    return select_min_positive(alpha_axis, rates)


def refine_crossing(skr_of_alpha: Callable[[float], float], lo: float, hi: float, tol: float = REFINE_TOL) -> float:
    """Bisect the sign change of ``skr_of_alpha`` inside ``(lo, hi)``.

    Requires ``skr(lo) <= 0 < skr(hi)``.  Returns ``lo`` when ``skr(lo)`` is
    exactly zero, otherwise the midpoint of a bracket narrower than ``tol``.
    """
    if not lo < hi:
        raise InvalidArgumentError(f"bracket must satisfy lo < hi, got ({lo}, {hi})")
    f_lo, f_hi = skr_of_alpha(lo), skr_of_alpha(hi)
    if not (f_lo <= 0 < f_hi):
        raise InvalidArgumentError(f"bracket does not straddle the crossing: skr(lo)={f_lo}, skr(hi)={f_hi}")
    if f_lo == 0:
        return float(lo)
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if skr_of_alpha(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def channel_skr_function(
    protocol: ProtocolSpec | Callable[[float], Constellation], ch: ChannelParams, cfg: ProtocolConfig
) -> Callable[[float], float]:
    build = _as_generator(protocol)
    return lambda a: compute_skr(build(a), ch, cfg).skr


def refine_scan(
    protocol: ProtocolSpec | Callable[[float], Constellation],
    ch: ChannelParams,
    alpha_axis: Sequence[float],
    result: ScanResult,
    cfg: ProtocolConfig,
    tol: float = REFINE_TOL,
) -> float | None:
    """Crossing just below the scan's alpha_min, if the grid brackets one."""
    k = result.index
    if k == 0:
        return None
    f = channel_skr_function(protocol, ch, cfg)
    lo = float(alpha_axis[k - 1])
    if f(lo) > 0:
        return None
    return refine_crossing(f, lo, result.alpha_min, tol)


# --------------------------------------------------------------------------
# sweep

def _moments_with_retry(build: Callable[[float], Constellation], alpha: float, cfg: ProtocolConfig) -> Moments | None:
    c = build(alpha)
    try:
        return constellation_moments(c, cfg)
    except AtlasError:
        base = cfg.fock_cutoff if cfg.fock_cutoff is not None else initial_cutoff(c) * 2 ** 3
        try:
            return constellation_moments(c, cfg.with_cutoff(2 * base))
        except AtlasError:
            return None


def _scan_row(
    T: float, xi_axis: Sequence[float], alpha_axis: Sequence[float], n: np.ndarray, Z: np.ndarray, cfg: ProtocolConfig
) -> list[ScanResult | None | str]:
    try:
        with np.errstate(all="ignore"):
            rates = key_rate_terms(n[None, :], Z[None, :], T, np.asarray(xi_axis)[:, None], cfg.beta, cfg.xi_reference)["skr"]
        rows = [rates[j] for j in range(len(xi_axis))]
    except AtlasError:
        rows = []
        for xi in xi_axis:
            try:
                rows.append(key_rate_terms(n, Z, T, xi, cfg.beta, cfg.xi_reference)["skr"])
            except AtlasError:
                rows.append(None)
    out: list[ScanResult | None | str] = []
    for r in rows:
        if r is None or np.any(np.isnan(r)):
            out.append(STATUS_FAILED)
        else:
            out.append(select_min_positive(alpha_axis, r))
    return out


def sweep(
    grid: SweepGrid,
    protocol: ProtocolSpec,
    cfg: ProtocolConfig | None = None,
    *,
    refine: bool = False,
    threads: int = 1,
    progress: ProgressCallback | None = None,
) -> BoundaryMesh:
    """Run the minimum-positive scan on every (T, xi) cell of ``grid``.

    The constellation statistics depend only on alpha, so they are computed
    once per alpha value and shared by all cells.  ``progress(done, total)``
    is called from the calling thread after each T row, in row order.
    Results are merged by index, so the mesh does not depend on ``threads``.
    """
    cfg = cfg or ProtocolConfig()
    build = protocol.build
    alphas = grid.alpha_axis
    n_T, n_xi = grid.shape
    threads = max(1, int(threads))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        moments = list(pool.map(lambda a: _moments_with_retry(build, a, cfg), alphas))
        alpha_ok = np.array([m is not None for m in moments])
        n = np.array([m.n_mean if m is not None else np.nan for m in moments])
        Z = np.array([m.Z if m is not None else np.nan for m in moments])

        alpha_min = np.full((n_T, n_xi), np.nan)
        skr_min = np.full((n_T, n_xi), np.nan)
        status = np.full((n_T, n_xi), STATUS_NONE, dtype=object)
        index = np.full((n_T, n_xi), -1)

        if alpha_ok.all():
            rows = pool.map(lambda T: _scan_row(T, grid.xi_axis, alphas, n, Z, cfg), grid.T_axis)
        else:
            rows = ([STATUS_FAILED] * n_xi for _ in grid.T_axis)
        for i, row in enumerate(rows):
            for j, res in enumerate(row):
                if res == STATUS_FAILED:
                    status[i, j] = STATUS_FAILED
                elif res is not None:
                    status[i, j] = STATUS_OK
                    alpha_min[i, j] = res.alpha_min
                    skr_min[i, j] = res.skr_min
                    index[i, j] = res.index
            if progress is not None:
                progress((i + 1) * n_xi, n_T * n_xi)

        failed = int(np.sum(status == STATUS_FAILED))
        if failed > MAX_FAILED_FRACTION * n_T * n_xi:
            raise SweepAbortedError(f"{failed} of {n_T * n_xi} cells failed for {protocol.name}")

        crossing = np.full((n_T, n_xi), np.nan)
        if refine:
            cells = [(i, j) for i in range(n_T) for j in range(n_xi) if status[i, j] == STATUS_OK]

            def _refine(ij):
                i, j = ij
                res = ScanResult(alpha_min[i, j], skr_min[i, j], int(index[i, j]))
                ch = ChannelParams(grid.T_axis[i], grid.xi_axis[j])
                return refine_scan(protocol, ch, alphas, res, cfg)

            for (i, j), val in zip(cells, pool.map(_refine, cells)):
                if val is not None:
                    crossing[i, j] = val

    return BoundaryMesh(protocol.name, grid, alpha_min, skr_min, status.astype(str), crossing)


def cutoff_curve(mesh: BoundaryMesh) -> list[tuple[float, float]]:
    """For each T row with any present cell, the largest feasible xi."""
    out = []
    for i, T in enumerate(mesh.grid.T_axis):
        cols = np.flatnonzero(mesh.present[i])
        if cols.size:
            out.append((T, mesh.grid.xi_axis[int(cols[-1])]))
    return out
