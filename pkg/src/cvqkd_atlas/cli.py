"""``cvqkd-atlas`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 computation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .boundary import BoundaryMesh, min_positive_scan, refine_scan, sweep
from .config import (
    EngineSpec,
    GridSpec,
    RunConfig,
    build_manifest,
    manifest_path,
    read_manifest,
    sha256_file,
    write_manifest,
)
from .constellation import ProtocolSpec, QamDistribution, QamWeighting
from .engine import ChannelParams
from .errors import AtlasError, ConfigError
from .plotting import PLOT_KINDS, render_svg
from .surface import PolySurface, Region, alpha_ave, compare_levels, evaluate_surface, fit_surface

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_COMPUTE = 3

log = logging.getLogger("cvqkd_atlas")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class QueryResult:
    feasible: bool
    alpha_min: float | None
    source: str
    protocol: str

    def __post_init__(self) -> None:
        if self.feasible != (self.alpha_min is not None):
            raise ValueError("alpha_min must be present exactly when feasible")


# --------------------------------------------------------------------------
# helpers

def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from exc
    return a, b


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _region(args, default: Region | None = None) -> Region:
    default = default or Region()
    return Region(args.region_T or default.T_bounds, args.region_xi or default.xi_bounds)


def _load_mesh(path: str, force: bool) -> tuple[BoundaryMesh, dict | None]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"mesh file not found: {path}")
    manifest = read_manifest(p)
    alpha_axis = None
    if manifest is not None:
        if manifest.get("mesh_sha256") != sha256_file(p) and not force:
            raise UsageError(f"{path} does not match the hash recorded in {manifest_path(p).name}; use --force to override")
        alpha_axis = manifest.get("alpha_axis")
    else:
        log.warning("no manifest next to %s; alpha axis inferred from the data", path)
    try:
        mesh = BoundaryMesh.read_csv(p, alpha_axis)
    except AtlasError as exc:
        raise UsageError(f"cannot read mesh {path}: {exc}") from exc
    return mesh, manifest


def _load_surface(path: str) -> PolySurface:
    try:
        return PolySurface.from_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read surface {path}: {exc}") from exc


# --------------------------------------------------------------------------
# sweep

def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.read(args.config) if args.config else RunConfig()
    if args.protocol:
        cfg = replace(cfg, protocols=tuple(p for chunk in args.protocol for p in chunk.split(",") if p))
    g = cfg.grid
    grid = GridSpec(
        (args.T_min if args.T_min is not None else g.T_range[0], args.T_max if args.T_max is not None else g.T_range[1]),
        args.T_steps or g.T_steps,
        (args.xi_min if args.xi_min is not None else g.xi_range[0], args.xi_max if args.xi_max is not None else g.xi_range[1]),
        args.xi_steps or g.xi_steps,
        args.xi_spacing or g.xi_spacing,
        (
            args.alpha_min if args.alpha_min is not None else g.alpha_range[0],
            args.alpha_max if args.alpha_max is not None else g.alpha_range[1],
        ),
        args.alpha_steps or g.alpha_steps,
    )
    e = cfg.engine
    engine = EngineSpec(
        args.beta if args.beta is not None else e.beta,
        e.detection,
        args.xi_reference or e.xi_reference,
        e.fock_cutoff if args.fock_cutoff is None else (None if args.fock_cutoff == "auto" else int(args.fock_cutoff)),
        e.refine or args.refine,
    )
    return RunConfig(
        cfg.protocols,
        args.qam_distribution or cfg.qam_distribution,
        args.nu if args.nu is not None else cfg.nu,
        grid,
        engine,
        cfg.region,
        args.out if args.out is not None else cfg.out_dir,
        args.threads if args.threads is not None else cfg.threads,
    )


def cmd_sweep(args) -> int:
    try:
        cfg = _config_from_args(args)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid.build()
    engine = cfg.engine.build()
    results = []
    for spec in cfg.protocol_specs():
        t0 = time.perf_counter()
        mesh = sweep(grid, spec, engine, refine=cfg.engine.refine, threads=cfg.thread_count())
        seconds = time.perf_counter() - t0
        results.append((spec, mesh, seconds))
    # all computation done before any file is written
    for spec, mesh, seconds in results:
        csv_path = out_dir / f"{spec.name}.csv"
        mesh.write_csv(csv_path)
        write_manifest(manifest_path(csv_path), build_manifest(cfg, spec.name, csv_path, mesh.counts(), seconds))
        c = mesh.counts()
        print(f"{spec.name}: {csv_path} ({c['ok']} ok, {c['none']} none, {c['failed']} failed, {seconds:.1f}s)")
    return EXIT_OK


# --------------------------------------------------------------------------
# fit / metric

def cmd_fit(args) -> int:
    mesh, manifest = _load_mesh(args.mesh, args.force)
    region = _region(args)
    surface = fit_surface(mesh, region)
    surface = replace(surface, config_hash=(manifest or {}).get("config_hash"))
    out = Path(args.out) if args.out else Path(args.mesh).with_suffix(".surface.json")
    out.write_text(surface.to_json() + "\n", encoding="utf-8")
    print(surface.to_json())
    return EXIT_OK


def cmd_metric(args) -> int:
    loaded = [_load_mesh(p, args.force) for p in args.meshes]
    hashes = {m["grid_hash"] for _, m in loaded if m is not None and "grid_hash" in m}
    if len(hashes) > 1 and not args.force:
        raise UsageError("meshes were produced with different grid/engine settings; use --force to compare anyway")
    default = None
    manifests = [m for _, m in loaded if m is not None and "config" in m]
    if manifests:
        default = RunConfig.from_ini(manifests[0]["config"]).region
    region = _region(args, default)
    metrics = [alpha_ave(mesh, region) for mesh, _ in loaded]
    ranking = compare_levels(metrics)
    if args.json:
        print(
            json.dumps(
                [
                    {"rank": k, "protocol": m.protocol, "alpha_ave": m.alpha_ave, "cell_count": m.cell_count}
                    for k, m in enumerate(ranking, start=1)
                ],
                indent=2,
            )
        )
    else:
        print(f"region: T in [{region.T_bounds[0]:g}, {region.T_bounds[1]:g}], xi in [{region.xi_bounds[0]:g}, {region.xi_bounds[1]:g}]")
        print(f"{'rank':>4}  {'protocol':<10} {'alpha_ave':>10} {'cells':>6}")
        for k, m in enumerate(ranking, start=1):
            print(f"{k:>4}  {m.protocol:<10} {m.alpha_ave:>10.4f} {m.cell_count:>6}")
    return EXIT_OK


# --------------------------------------------------------------------------
# query

def _query(args) -> QueryResult:
    if not (0.0 <= args.T <= 1.0) or not args.xi > 0:
        raise UsageError("query needs T in [0, 1] and xi > 0")
    if args.mesh is None and args.surface is None:
        raise UsageError("query needs --mesh and/or --surface")
    source = args.source or ("mesh-cell" if args.mesh else "surface-interpolated")
    mesh = manifest = surface = None
    if args.mesh:
        mesh, manifest = _load_mesh(args.mesh, args.force)
    if args.surface:
        surface = _load_surface(args.surface)

    if source == "mesh-cell":
        if mesh is None:
            raise UsageError("--source mesh-cell needs --mesh")
        i, j = mesh.nearest_index(args.T, args.xi)
        pt = mesh.cell(i, j)
        return QueryResult(pt is not None, None if pt is None else pt.alpha_min, source, mesh.protocol)

    if source == "refined":
        if manifest is None:
            raise UsageError("--source refined needs a mesh with its manifest (protocol and engine settings)")
        cfg = RunConfig.from_ini(manifest["config"])
        spec = ProtocolSpec.parse(manifest["protocol"], cfg.distribution())
        engine = cfg.engine.build()
        axis = manifest["alpha_axis"]
        ch = ChannelParams(args.T, args.xi)
        res = min_positive_scan(spec, ch, axis, engine)
        if res is None:
            return QueryResult(False, None, source, spec.name)
        crossing = refine_scan(spec, ch, axis, res, engine)
        return QueryResult(True, res.alpha_min if crossing is None else crossing, source, spec.name)

    if surface is None:
        raise UsageError("--source surface-interpolated needs --surface")
    if mesh is not None:
        i, j = mesh.nearest_index(args.T, args.xi)
        feasible = bool(mesh.present[i, j])
        lo, hi = mesh.grid.alpha_axis[0], mesh.grid.alpha_axis[-1]
    else:
        feasible = bool(surface.region.contains(args.T, args.xi))
        lo, hi = -float("inf"), float("inf")
    if not feasible:
        return QueryResult(False, None, source, surface.protocol)
    val = float(evaluate_surface(surface, args.T, args.xi))
    val = min(max(val, lo), hi)
    return QueryResult(True, val, source, surface.protocol)


def cmd_query(args) -> int:
    res = _query(args)
    if args.json:
        print(json.dumps(asdict(res)))
    elif res.feasible:
        print(f"{res.protocol}: feasible, minimum alpha {res.alpha_min:.6g} SNU ({res.source})")
    else:
        print(f"{res.protocol}: no positive key rate at T={args.T:g}, xi={args.xi:g} ({res.source})")
    return EXIT_OK


# --------------------------------------------------------------------------
# plot / export

def cmd_plot(args) -> int:
    meshes, surfaces = [], []
    for path in args.inputs:
        if path.endswith(".json"):
            surfaces.append(_load_surface(path))
        else:
            meshes.append(_load_mesh(path, args.force)[0])
    if not meshes:
        raise UsageError("plot needs at least one mesh CSV")
    svg = render_svg(args.kind, meshes, args.T or (0.5, 0.75, 1.0), surfaces)
    out = Path(args.out) if args.out else Path(f"{args.kind}.svg")
    out.write_bytes(svg)
    print(out)
    return EXIT_OK


def cmd_export(args) -> int:
    if args.constellation:
        if args.alpha is None:
            raise UsageError("--constellation needs --alpha")
        dist = QamDistribution(QamWeighting(args.qam_distribution), args.nu)
        try:
            text = ProtocolSpec.parse(args.constellation, dist).build(args.alpha).to_json(indent=2)
        except AtlasError as exc:
            raise UsageError(str(exc)) from exc
    elif args.mesh:
        mesh, _ = _load_mesh(args.mesh, args.force)
        text = json.dumps(mesh.to_dict(), indent=2)
    else:
        raise UsageError("export needs a mesh file or --constellation")
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _add_region(p: argparse.ArgumentParser) -> None:
    p.add_argument("--region-T", dest="region_T", type=_pair, metavar="LO,HI", help="T bounds (default 0,1)")
    p.add_argument("--region-xi", dest="region_xi", type=_pair, metavar="LO,HI", help="xi bounds (default: all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvqkd-atlas", description="Map minimum positive key-rate boundaries for DM-CVQKD.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="compute boundary meshes")
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--protocol", action="append", help="protocol name(s), e.g. apsk16 or psk16,qam16")
    p.add_argument("--defaults", action="store_true", help="use the default parameter table (the default anyway)")
    for name in ("T-min", "T-max", "xi-min", "xi-max", "alpha-min", "alpha-max", "beta", "nu"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    for name in ("T-steps", "xi-steps", "alpha-steps", "threads"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=int)
    p.add_argument("--xi-spacing", choices=("linear", "log"))
    p.add_argument("--xi-reference", choices=("input", "output"))
    p.add_argument("--fock-cutoff", help="integer >= 4 or 'auto'")
    p.add_argument("--qam-distribution", choices=("binomial", "gaussian"))
    p.add_argument("--refine", action="store_true", help="bisect the zero crossing below each boundary point")
    p.add_argument("--out", help="output directory (default: $CVQKD_ATLAS_OUT or .)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit the cubic boundary surface to a mesh")
    p.add_argument("mesh")
    _add_region(p)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metric", help="rank meshes by alpha_ave")
    p.add_argument("meshes", nargs="+")
    _add_region(p)
    p.add_argument("--json", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("query", help="minimum alpha for one channel")
    p.add_argument("--mesh")
    p.add_argument("--surface")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--source", choices=("mesh-cell", "refined", "surface-interpolated"))
    p.add_argument("--json", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("plot", help="render meshes (and surfaces) to SVG")
    p.add_argument("inputs", nargs="+", help="mesh CSV files and optional surface JSON files")
    p.add_argument("--kind", choices=PLOT_KINDS, required=True)
    p.add_argument("--T", type=_floats, help="T values for slices (default 0.5,0.75,1)")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("export", help="export a mesh or a constellation as JSON")
    p.add_argument("mesh", nargs="?")
    p.add_argument("--constellation", help="protocol name, e.g. apsk16")
    p.add_argument("--alpha", type=float)
    p.add_argument("--qam-distribution", choices=("binomial", "gaussian"), default="binomial")
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AtlasError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
