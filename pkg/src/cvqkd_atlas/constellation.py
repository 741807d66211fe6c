"""Coherent-state constellations for discrete-modulated CVQKD.

Amplitudes are complex coherent-state labels, so a point ``a`` has mean
photon number ``|a|**2`` and quadrature means ``(2 Re a, 2 Im a)`` in
shot-noise units.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidArgumentError, UnsupportedConstellationError

# Points per ring, innermost first.
APSK_RING_CAPACITIES = (4, 12, 16, 32, 64, 128, 256)

PROB_SUM_TOL = 1e-12
DEFAULT_GAUSSIAN_NU = 0.1


class Protocol(str, enum.Enum):
    PSK = "PSK"
    QAM = "QAM"
    APSK = "APSK"


class QamWeighting(str, enum.Enum):
    BINOMIAL = "binomial"
    DISCRETE_GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class QamDistribution:
    """Weighting of QAM grid points.

    ``nu`` only matters for the discrete Gaussian weighting, where each point
    gets weight ``exp(-nu * |a|**2)`` before normalisation.
    """

    kind: QamWeighting = QamWeighting.BINOMIAL
    nu: float = DEFAULT_GAUSSIAN_NU

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", QamWeighting(self.kind))
        if self.kind is QamWeighting.DISCRETE_GAUSSIAN:
            if not (math.isfinite(self.nu) and self.nu > 0):
                raise InvalidArgumentError(f"nu must be finite and > 0, got {self.nu!r}")

    @classmethod
    def binomial(cls) -> QamDistribution:
        return cls(QamWeighting.BINOMIAL)

    @classmethod
    def gaussian(cls, nu: float = DEFAULT_GAUSSIAN_NU) -> QamDistribution:
        return cls(QamWeighting.DISCRETE_GAUSSIAN, nu)


@dataclass(frozen=True, eq=False)
class Constellation:
    """A probability-weighted set of coherent-state amplitudes.

    The arrays are stored read-only; instances are safe to share between
    threads.
    """

    amplitudes: np.ndarray
    probabilities: np.ndarray
    protocol: Protocol
    alpha: float
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=complex).ravel()
        probs = np.array(self.probabilities, dtype=float).ravel()
        if amps.shape != probs.shape or amps.size == 0:
            raise InvalidArgumentError("amplitudes and probabilities must be non-empty and equal length")
        if not np.all(np.isfinite(amps)) or not np.all(np.isfinite(probs)):
            raise InvalidArgumentError("non-finite amplitude or probability")
        if np.any(probs <= 0):
            raise InvalidArgumentError("all probabilities must be > 0")
        if abs(math.fsum(probs) - 1.0) >= PROB_SUM_TOL:
            raise InvalidArgumentError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        keys = {(round(a.real, 12), round(a.imag, 12)) for a in amps}
        if len(keys) != amps.size:
            raise InvalidArgumentError("duplicate amplitudes in constellation")
        amps.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def size(self) -> int:
        return int(self.amplitudes.size)

    @property
    def points(self) -> list[tuple[complex, float]]:
        return [(complex(a), float(p)) for a, p in zip(self.amplitudes, self.probabilities)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "M": self.size,
            "alpha": self.alpha,
            "points": [
                {"re": float(a.real), "im": float(a.imag), "p": float(p)}
                for a, p in zip(self.amplitudes, self.probabilities)
            ],
        }

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Constellation:
        points = data["points"]
        if len(points) != int(data["M"]):
            raise InvalidArgumentError("point count does not match M")
        amps = [complex(pt["re"], pt["im"]) for pt in points]
        probs = [pt["p"] for pt in points]
        return cls(np.array(amps), np.array(probs), Protocol(data["protocol"]), float(data["alpha"]))

    @classmethod
    def from_json(cls, text: str) -> Constellation:
        return cls.from_dict(json.loads(text))


def _unit_phases(M: int) -> np.ndarray:
    # cos/sin of 2*pi*k/M from the reduced fraction so quarter turns are exact
    k = np.arange(M)
    re = np.empty(M)
    im = np.empty(M)
    for i, kk in enumerate(k):
        g = math.gcd(int(kk), M)
        num, den = int(kk) // g, M // g
        if den == 1:
            re[i], im[i] = 1.0, 0.0
        elif den == 2:
            re[i], im[i] = -1.0, 0.0
        elif den == 4:
            re[i], im[i] = (0.0, 1.0) if num == 1 else (0.0, -1.0)
        else:
            theta = 2.0 * math.pi * num / den
            re[i], im[i] = math.cos(theta), math.sin(theta)
    return re + 1j * im


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (math.isfinite(alpha) and alpha > 0):
        raise InvalidArgumentError(f"alpha must be finite and > 0, got {alpha!r}")
    return alpha


def make_psk(M: int, alpha: float) -> Constellation:
    """M equally likely states ``alpha * exp(2j*pi*k/M)`` on a circle."""
    if int(M) != M or M < 2:
        raise InvalidArgumentError(f"PSK needs integer M >= 2, got {M!r}")
    M = int(M)
    alpha = _check_alpha(alpha)
    return Constellation(alpha * _unit_phases(M), np.full(M, 1.0 / M), Protocol.PSK, alpha)


def make_qam(M: int, alpha: float, dist: QamDistribution | None = None) -> Constellation:
    """Square m x m grid with quadrature components spaced evenly in
    ``[-alpha*sqrt(2)*sqrt(m-1)/2, +alpha*sqrt(2)*sqrt(m-1)/2]``.

    With binomial weights the mean photon number is exactly ``alpha**2``.
    """
    dist = dist or QamDistribution.binomial()
    if int(M) != M:
        raise InvalidArgumentError(f"QAM size must be an integer, got {M!r}")
    M = int(M)
    m = math.isqrt(M) if M > 0 else 0
    if m * m != M or m < 2:
        raise InvalidArgumentError(f"QAM size must be a perfect square >= 4, got {M}")
    alpha = _check_alpha(alpha)

    step = alpha * math.sqrt(2.0) / math.sqrt(m - 1)
    offsets = np.arange(m) - (m - 1) / 2.0
    x = step * offsets
    # row-major over (k, l): k indexes the real part, l the imaginary part
    amps = (x[:, None] + 1j * x[None, :]).ravel()

    if dist.kind is QamWeighting.BINOMIAL:
        w1 = np.array([math.comb(m - 1, k) for k in range(m)], dtype=float) / 2.0 ** (m - 1)
        probs = np.outer(w1, w1).ravel()
    else:
        w = np.exp(-dist.nu * np.abs(amps) ** 2)
        probs = w / math.fsum(w)
    meta = {"distribution": dist.kind.value}
    if dist.kind is QamWeighting.DISCRETE_GAUSSIAN:
        meta["nu"] = dist.nu
    return Constellation(amps, probs, Protocol.QAM, alpha, meta)


def apsk_rings(M: int) -> tuple[int, ...]:
    """Ring populations for an M-point APSK constellation.

    Only M reachable as a prefix sum of ``APSK_RING_CAPACITIES`` is
    supported; anything else raises rather than guessing a layout.
    """
    total = 0
    for R, cap in enumerate(APSK_RING_CAPACITIES, start=1):
        total += cap
        if total == M:
            return APSK_RING_CAPACITIES[:R]
        if total > M:
            break
    sums = np.cumsum(APSK_RING_CAPACITIES).tolist()
    raise UnsupportedConstellationError(f"APSK size {M} is not one of the supported sizes {sums}")


def make_apsk(M: int, alpha: float) -> Constellation:
    """Concentric-ring constellation with radii ``alpha * p / R``, p = 1..R.

    Each ring is equally likely and points within a ring share its weight,
    so a point on ring p has probability ``1 / (R * M_p)``.
    """
    if int(M) != M:
        raise InvalidArgumentError(f"APSK size must be an integer, got {M!r}")
    rings = apsk_rings(int(M))
    alpha = _check_alpha(alpha)
    R = len(rings)
    amps, probs = [], []
    for p, Mp in enumerate(rings, start=1):
        amps.append(alpha * (p / R) * _unit_phases(Mp))
        probs.append(np.full(Mp, 1.0 / (R * Mp)))
    return Constellation(np.concatenate(amps), np.concatenate(probs), Protocol.APSK, alpha, {"rings": list(rings)})


def mean_photon_number(c: Constellation) -> float:
    return math.fsum(c.probabilities * np.abs(c.amplitudes) ** 2)


_SPEC_RE = re.compile(r"^\s*(psk|qam|apsk)[-_]?(\d+)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class ProtocolSpec:
    """A constellation family at fixed size, instantiated for any alpha."""

    kind: Protocol
    M: int
    distribution: QamDistribution = field(default_factory=QamDistribution.binomial)

    def __post_init__(self) -> None:
        kind = self.kind.value if isinstance(self.kind, Protocol) else str(self.kind)
        object.__setattr__(self, "kind", Protocol(kind.upper()))
        object.__setattr__(self, "M", int(self.M))
        # validate size eagerly so a bad spec fails before any sweep starts
        self.build(0.5)

    @property
    def name(self) -> str:
        return f"{self.kind.value.lower()}{self.M}"

    def build(self, alpha: float) -> Constellation:
        if self.kind is Protocol.PSK:
            return make_psk(self.M, alpha)
        if self.kind is Protocol.QAM:
            return make_qam(self.M, alpha, self.distribution)
        return make_apsk(self.M, alpha)

    __call__ = build

    @classmethod
    def parse(cls, text: str, distribution: QamDistribution | None = None) -> ProtocolSpec:
        """Parse names such as ``apsk16``, ``QAM-64`` or ``psk_8``."""
        m = _SPEC_RE.match(text)
        if not m:
            raise InvalidArgumentError(f"unrecognised protocol {text!r}; expected e.g. psk16, qam16, apsk64")
        return cls(Protocol(m.group(1).upper()), int(m.group(2)), distribution or QamDistribution.binomial())
