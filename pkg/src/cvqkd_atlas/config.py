"""Declarative run configuration, config hashing and run manifests.

Configs are INI files with ``[protocol]``, ``[grid]``, ``[engine]``,
``[metric]`` and ``[output]`` sections.  Every key is optional; omitted keys
take the defaults below, which reproduce the standard parameter table
(T 0-1, xi 0.001-0.5, alpha 0.1-0.5, beta 0.95, heterodyne).
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .boundary import SweepGrid
from .constellation import ProtocolSpec, QamDistribution, QamWeighting
from .engine import ProtocolConfig, XiReference
from .errors import AtlasError, ConfigError
from .surface import Region

OUTPUT_ENV = "CVQKD_ATLAS_OUT"
MANIFEST_SUFFIX = ".manifest.json"


def _float_list(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True)
class GridSpec:
    T_range: tuple[float, float] = (0.0, 1.0)
    T_steps: int = 50
    xi_range: tuple[float, float] = (0.001, 0.5)
    xi_steps: int = 50
    xi_spacing: str = "linear"
    alpha_range: tuple[float, float] = (0.1, 0.5)
    alpha_steps: int = 40

    def build(self) -> SweepGrid:
        return SweepGrid.from_ranges(
            self.T_range, self.xi_range, self.alpha_range, self.T_steps, self.xi_steps, self.alpha_steps, self.xi_spacing
        )


@dataclass(frozen=True)
class EngineSpec:
    beta: float = 0.95
    detection: str = "heterodyne"
    xi_reference: str = "input"
    fock_cutoff: int | None = None
    refine: bool = False

    def build(self) -> ProtocolConfig:
        return ProtocolConfig(self.beta, self.detection, self.fock_cutoff, XiReference(self.xi_reference))


@dataclass(frozen=True)
class RunConfig:
    protocols: tuple[str, ...] = ("apsk16",)
    qam_distribution: str = "binomial"
    nu: float = 0.1
    grid: GridSpec = field(default_factory=GridSpec)
    engine: EngineSpec = field(default_factory=EngineSpec)
    region: Region = field(default_factory=lambda: Region((0.0, 1.0), (0.0, 0.5)))
    out_dir: str = ""
    threads: int = 0

    def __post_init__(self) -> None:
        # surface every validation error as a ConfigError
        try:
            self.protocol_specs()
            self.grid.build()
            self.engine.build()
        except ConfigError:
            raise
        except (AtlasError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.threads < 0:
            raise ConfigError("threads must be >= 0 (0 = all cores)")

    def distribution(self) -> QamDistribution:
        return QamDistribution(QamWeighting(self.qam_distribution), self.nu)

    def protocol_specs(self) -> list[ProtocolSpec]:
        if not self.protocols:
            raise ConfigError("no protocols configured")
        return [ProtocolSpec.parse(p, self.distribution()) for p in self.protocols]

    def output_dir(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUTPUT_ENV, "") or ".")

    def thread_count(self) -> int:
        return self.threads or (os.cpu_count() or 1)

    # -- (de)serialisation -------------------------------------------------

    def _parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        g, e = self.grid, self.engine
        cp["protocol"] = {
            "names": ", ".join(self.protocols),
            "qam_distribution": self.qam_distribution,
            "nu": _fmt(self.nu),
        }
        cp["grid"] = {
            "t_range": ", ".join(map(_fmt, g.T_range)),
            "t_steps": str(g.T_steps),
            "xi_range": ", ".join(map(_fmt, g.xi_range)),
            "xi_steps": str(g.xi_steps),
            "xi_spacing": g.xi_spacing,
            "alpha_range": ", ".join(map(_fmt, g.alpha_range)),
            "alpha_steps": str(g.alpha_steps),
        }
        cp["engine"] = {
            "beta": _fmt(e.beta),
            "detection": e.detection,
            "xi_reference": e.xi_reference,
            "fock_cutoff": "auto" if e.fock_cutoff is None else str(e.fock_cutoff),
            "refine": "true" if e.refine else "false",
        }
        cp["metric"] = {
            "region_t": ", ".join(map(_fmt, self.region.T_bounds)),
            "region_xi": ", ".join(map(_fmt, self.region.xi_bounds)),
        }
        cp["output"] = {"directory": self.out_dir, "threads": str(self.threads)}
        return cp

    def to_ini(self) -> str:
        buf = io.StringIO()
        self._parser().write(buf)
        return buf.getvalue()

    def _section_text(self, *names: str) -> str:
        cp = self._parser()
        return "\n".join(f"[{n}]\n" + "\n".join(f"{k}={v}" for k, v in cp[n].items()) for n in names)

    @property
    def config_hash(self) -> str:
        """Hash of everything that changes the computed meshes (not outputs or threads)."""
        return hashlib.sha256(self._section_text("protocol", "grid", "engine").encode()).hexdigest()[:16]

    @property
    def grid_hash(self) -> str:
        """Hash of grid and engine only; meshes sharing it are comparable."""
        text = self._section_text("grid", "engine") + f"\nqam={self.qam_distribution},{_fmt(self.nu)}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_ini(cls, text: str) -> RunConfig:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        known = {"protocol", "grid", "engine", "metric", "output"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        d = cls()
        try:
            p = cp["protocol"] if cp.has_section("protocol") else {}
            protocols = tuple(s.strip() for s in p.get("names", ",".join(d.protocols)).split(",") if s.strip())
            g = cp["grid"] if cp.has_section("grid") else {}
            dg = d.grid
            grid = GridSpec(
                _float_list(g["t_range"], 2) if "t_range" in g else dg.T_range,
                int(g.get("t_steps", dg.T_steps)),
                _float_list(g["xi_range"], 2) if "xi_range" in g else dg.xi_range,
                int(g.get("xi_steps", dg.xi_steps)),
                g.get("xi_spacing", dg.xi_spacing),
                _float_list(g["alpha_range"], 2) if "alpha_range" in g else dg.alpha_range,
                int(g.get("alpha_steps", dg.alpha_steps)),
            )
            e = cp["engine"] if cp.has_section("engine") else {}
            cutoff = e.get("fock_cutoff", "auto").strip().lower()
            refine = e.get("refine", "false").strip().lower()
            if refine not in ("true", "false", "yes", "no", "1", "0"):
                raise ConfigError(f"refine must be a boolean, got {refine!r}")
            engine = EngineSpec(
                float(e.get("beta", d.engine.beta)),
                e.get("detection", d.engine.detection).strip().lower(),
                e.get("xi_reference", d.engine.xi_reference).strip().lower(),
                None if cutoff == "auto" else int(cutoff),
                refine in ("true", "yes", "1"),
            )
            m = cp["metric"] if cp.has_section("metric") else {}
            region = Region(
                _float_list(m["region_t"], 2) if "region_t" in m else d.region.T_bounds,
                _float_list(m["region_xi"], 2) if "region_xi" in m else d.region.xi_bounds,
            )
            o = cp["output"] if cp.has_section("output") else {}
            return cls(
                protocols,
                p.get("qam_distribution", d.qam_distribution).strip().lower(),
                float(p.get("nu", d.nu)),
                grid,
                engine,
                region,
                o.get("directory", d.out_dir).strip(),
                int(o.get("threads", d.threads)),
            )
        except ConfigError:
            raise
        except (ValueError, KeyError, AtlasError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

    @classmethod
    def read(cls, path: str | os.PathLike) -> RunConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text)

    def with_updates(self, **changes: Any) -> RunConfig:
        return replace(self, **changes)


# --------------------------------------------------------------------------
# manifests

def manifest_path(mesh_path: str | os.PathLike) -> Path:
    p = Path(mesh_path)
    return p.with_name(p.stem + MANIFEST_SUFFIX)


def sha256_file(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(cfg: RunConfig, protocol: str, mesh_file: Path, counts: dict[str, int], seconds: float) -> dict[str, Any]:
    grid = cfg.grid.build()
    return {
        "protocol": protocol,
        "config_hash": cfg.config_hash,
        "grid_hash": cfg.grid_hash,
        "mesh_file": mesh_file.name,
        "mesh_sha256": sha256_file(mesh_file),
        "alpha_axis": list(grid.alpha_axis),
        "cell_counts": counts,
        "timings": {"sweep_seconds": round(seconds, 3)},
        "config": cfg.to_ini(),
    }


def write_manifest(path: Path, manifest: dict[str, Any]) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(mesh_path: str | os.PathLike) -> dict[str, Any] | None:
    p = manifest_path(mesh_path)
    if not p.exists():
        return None
    return json.loads(p.read_text(encoding="utf-8"))
