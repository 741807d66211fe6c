"""Asymptotic heterodyne key rate under collective attacks.

The discrete constellation enters only through two scalars: the mean photon
number ``n`` and the correlation term ``Z = 2 Tr(sqrt(tau) a^dag sqrt(tau) a)``
of the averaged state ``tau``.  Everything downstream is the usual two-mode
covariance-matrix bound with vacuum variance 1::

    X = 2n + 1,  Y = 2Tn + T*xi + 1,  C = sqrt(T) * Z

Eve's information is ``g(nu1) + g(nu2) - g(nu3)`` with ``nu3`` Alice's
conditional eigenvalue after Bob's heterodyne measurement.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .constellation import Constellation, mean_photon_number
from .errors import (
    ComputationError,
    ConvergenceError,
    InvalidArgumentError,
    NumericalDomainError,
    TruncationError,
)

logger = logging.getLogger(__name__)

MIN_FIXED_CUTOFF = 4
AUTO_CUTOFF_FLOOR = 20
MAX_DOUBLINGS = 3
Z_STABLE_TOL = 1e-9
NORM_TOL = 1e-10
EIG_NEG_TOL = 1e-12
IMAG_TOL = 1e-10
NU_TOL = 1e-9


class XiReference(str, enum.Enum):
    """Where excess noise is referred: channel input (Bob sees ``T*xi``) or output (Bob sees ``xi``)."""

    INPUT = "input"
    OUTPUT = "output"


@dataclass(frozen=True)
class ChannelParams:
    T: float
    xi: float

    def __post_init__(self) -> None:
        T, xi = float(self.T), float(self.xi)
        if not (math.isfinite(T) and 0.0 <= T <= 1.0):
            raise InvalidArgumentError(f"transmittance must lie in [0, 1], got {self.T!r}")
        if not (math.isfinite(xi) and xi >= 0.0):
            raise InvalidArgumentError(f"excess noise must be finite and >= 0, got {self.xi!r}")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True)
class ProtocolConfig:
    """Engine settings.

    ``fock_cutoff=None`` selects the cutoff automatically.  ``gaussian_limit``
    replaces the constellation's Z by its Gaussian-modulation value
    ``2*sqrt(n*(n+1))``.
    """

    beta: float = 0.95
    detection: str = "heterodyne"
    fock_cutoff: int | None = None
    xi_reference: XiReference = XiReference.INPUT
    gaussian_limit: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and 0.0 < self.beta <= 1.0):
            raise InvalidArgumentError(f"beta must lie in (0, 1], got {self.beta!r}")
        if self.detection != "heterodyne":
            raise InvalidArgumentError(f"only heterodyne detection is supported, got {self.detection!r}")
        if self.fock_cutoff is not None and (int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < MIN_FIXED_CUTOFF):
            raise InvalidArgumentError(f"fock_cutoff must be an integer >= {MIN_FIXED_CUTOFF} or None")
        object.__setattr__(self, "xi_reference", XiReference(self.xi_reference))

    def with_cutoff(self, cutoff: int | None) -> ProtocolConfig:
        return ProtocolConfig(self.beta, self.detection, cutoff, self.xi_reference, self.gaussian_limit)


@dataclass(frozen=True)
class SKRBreakdown:
    n_mean: float
    Z: float
    X: float
    Y: float
    C: float
    nu1: float
    nu2: float
    nu3: float
    I_AB: float
    S_BE: float
    skr: float
    beta: float
    fock_cutoff: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Moments:
    """Channel-independent statistics of a constellation."""

    n_mean: float
    Z: float
    fock_cutoff: int | None


# --------------------------------------------------------------------------
# Fock-space numerics

def fock_amplitudes(alpha: complex, cutoff: int) -> np.ndarray:
    """Coefficients ``<m|alpha>`` for m = 0..cutoff."""
    if cutoff < 0:
        raise InvalidArgumentError("cutoff must be >= 0")
    alpha = complex(alpha)
    out = np.empty(cutoff + 1, dtype=complex)
    out[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for m in range(1, cutoff + 1):
        out[m] = out[m - 1] * alpha / math.sqrt(m)
    return out


def _fock_matrix(amplitudes: np.ndarray, cutoff: int) -> np.ndarray:
    """Columns are the truncated Fock vectors of each amplitude."""
    amps = np.asarray(amplitudes, dtype=complex)
    F = np.empty((cutoff + 1, amps.size), dtype=complex)
    F[0] = np.exp(-0.5 * np.abs(amps) ** 2)
    for m in range(1, cutoff + 1):
        F[m] = F[m - 1] * amps / math.sqrt(m)
    return F


def average_state(c: Constellation, cutoff: int) -> np.ndarray:
    """Truncated density matrix ``sum_k p_k |a_k><a_k|``."""
    F = _fock_matrix(c.amplitudes, cutoff)
    norms = np.sum(np.abs(F) ** 2, axis=0)
    worst = float(norms.min())
    if worst < 1.0 - NORM_TOL:
        raise TruncationError(
            f"cutoff {cutoff} captures only {worst:.12f} of the largest coherent state's norm",
            achieved_norm=worst,
        )
    tau = (F * c.probabilities) @ F.conj().T
    return 0.5 * (tau + tau.conj().T)


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(rho)
    if w.min() < -EIG_NEG_TOL:
        raise ComputationError(f"averaged state has eigenvalue {w.min():.3e} below -{EIG_NEG_TOL}")
    # eigenvalues below the solver's resolution are round-off; their square
    # roots (~1e-8) would otherwise leak into Z
    floor = rho.shape[0] * np.finfo(float).eps * max(float(w.max()), 0.0)
    w = np.where(w > floor, w, 0.0)
    return (U * np.sqrt(w)) @ U.conj().T


def _annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1)


def correlation_z_fixed(c: Constellation, cutoff: int) -> float:
    tau = average_state(c, cutoff)
    s = _psd_sqrt(tau)
    a = _annihilation(cutoff)
    val = 2.0 * np.trace(s @ a.conj().T @ s @ a)
    if abs(val.imag) > IMAG_TOL:
        raise ComputationError(f"correlation term has imaginary residue {val.imag:.3e}")
    return max(float(val.real), 0.0)


def initial_cutoff(c: Constellation) -> int:
    peak = float(np.max(np.abs(c.amplitudes) ** 2))
    return max(AUTO_CUTOFF_FLOOR, math.ceil(4.0 * (peak + 3.0)))


def select_cutoff(c: Constellation) -> tuple[int, float]:
    """Double the cutoff from :func:`initial_cutoff` until Z moves by at most 1e-9.

    Returns the larger cutoff of the first stable pair and its Z.
    """
    N = initial_cutoff(c)
    prev: float | None = None
    last_err: TruncationError | None = None
    for _ in range(MAX_DOUBLINGS + 1):
        try:
            z = correlation_z_fixed(c, N)
        except TruncationError as exc:
            last_err, z = exc, None
        if z is not None and prev is not None and abs(z - prev) <= Z_STABLE_TOL:
            return N, z
        prev = z
        N *= 2
    if prev is None and last_err is not None:
        raise last_err
    raise ConvergenceError(f"correlation term did not stabilise to {Z_STABLE_TOL} within {MAX_DOUBLINGS} doublings")


def correlation_Z(c: Constellation, cutoff: int | None = None) -> float:
    if cutoff is None:
        return select_cutoff(c)[1]
    return correlation_z_fixed(c, cutoff)


def gaussian_correlation(n_mean):
    """Z of a Gaussian modulation with the same mean photon number (an upper bound)."""
    n = np.asarray(n_mean, dtype=float)
    out = 2.0 * np.sqrt(n * (n + 1.0))
    return float(out) if out.ndim == 0 else out


def constellation_moments(c: Constellation, cfg: ProtocolConfig) -> Moments:
    n = mean_photon_number(c)
    if cfg.gaussian_limit:
        return Moments(n, gaussian_correlation(n), None)
    if cfg.fock_cutoff is None:
        N, z = select_cutoff(c)
    else:
        N, z = cfg.fock_cutoff, correlation_z_fixed(c, cfg.fock_cutoff)
    return Moments(n, z, N)


# --------------------------------------------------------------------------
# Covariance-matrix bound

def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def _bob_noise(T, xi, xi_reference: XiReference):
    return np.asarray(xi, dtype=float) if XiReference(xi_reference) is XiReference.OUTPUT else T * np.asarray(xi, dtype=float)


def mutual_information(ch: ChannelParams, n_mean: float, xi_reference: XiReference = XiReference.INPUT) -> float:
    """Heterodyne Gaussian-channel mutual information ``log2(1 + SNR)`` in bits."""
    if n_mean < 0:
        raise InvalidArgumentError("n_mean must be >= 0")
    return float(_mutual_information(ch.T, ch.xi, n_mean, xi_reference))


def _mutual_information(T, xi, n_mean, xi_reference):
    T = np.asarray(T, dtype=float)
    noise = _bob_noise(T, xi, xi_reference)
    return np.log2(1.0 + 2.0 * T * n_mean / (2.0 + noise))


def symplectic_eigenvalues(X, Y, C):
    """Symplectic eigenvalues ``(nu1, nu2)``, nu1 >= nu2, of ``[[X I, C Z], [C Z, Y I]]``.

    Accepts scalars or broadcastable arrays.
    """
    X, Y, C = (np.asarray(v, dtype=float) for v in (X, Y, C))
    delta = X * X + Y * Y - 2.0 * C * C
    det_root = X * Y - C * C
    disc = delta * delta - 4.0 * det_root * det_root
    if np.any(disc < -NU_TOL * np.maximum(delta * delta, 1.0)):
        raise NumericalDomainError("covariance matrix is unphysical: negative discriminant")
    nu1 = np.sqrt(0.5 * (delta + np.sqrt(np.clip(disc, 0.0, None))))
    # product form avoids cancellation in the smaller root
    nu2 = np.abs(det_root) / nu1
    return _scalar_or_array(nu1), _scalar_or_array(nu2)


def g_function(x):
    """Entropy of a thermal mode with symplectic eigenvalue ``x``, in bits."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise NumericalDomainError("g(x) got NaN")
    if np.any(x < 1.0 - NU_TOL):
        raise NumericalDomainError(f"g(x) requires x >= 1, got {x.min()!r}")
    x = np.maximum(x, 1.0)
    up = 0.5 * (x + 1.0)
    down = 0.5 * (x - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo_term = np.where(down > 0.0, down * np.log2(np.where(down > 0.0, down, 1.0)), 0.0)
    out = up * np.log2(up) - lo_term
    return _scalar_or_array(out)


def key_rate_terms(n_mean, Z, T, xi, beta: float, xi_reference: XiReference = XiReference.INPUT) -> dict:
    """Vectorised key-rate pipeline; every input broadcasts.

    Returns a dict with the keys of :class:`SKRBreakdown` (minus the
    bookkeeping fields).
    """
    n = np.asarray(n_mean, dtype=float)
    Zc = np.asarray(Z, dtype=float)
    T = np.asarray(T, dtype=float)
    if any(np.any(np.isnan(v)) for v in (n, Zc, T, np.asarray(xi, dtype=float))):
        raise ComputationError("NaN input to the key-rate pipeline")
    noise = _bob_noise(T, xi, xi_reference)
    X = 2.0 * n + 1.0
    Y = 2.0 * T * n + noise + 1.0
    C = np.sqrt(T) * Zc
    nu1, nu2 = symplectic_eigenvalues(X, Y, C)
    nu3 = X - C * C / (Y + 1.0)
    S = g_function(nu1) + g_function(nu2) - g_function(nu3)
    S = np.asarray(S, dtype=float)
    if np.any(S < -NU_TOL):
        raise ComputationError(f"negative Holevo bound {S.min():.3e}")
    S = np.maximum(S, 0.0)
    I = _mutual_information(T, xi, n, xi_reference)
    skr = beta * I - S
    return {"X": X, "Y": Y, "C": C, "nu1": nu1, "nu2": nu2, "nu3": nu3, "I_AB": I, "S_BE": S, "skr": skr}


def skr_from_moments(m: Moments, ch: ChannelParams, cfg: ProtocolConfig) -> SKRBreakdown:
    terms = key_rate_terms(m.n_mean, m.Z, ch.T, ch.xi, cfg.beta, cfg.xi_reference)
    vals = {k: float(v) for k, v in terms.items()}
    if any(math.isnan(v) for v in vals.values()):
        raise ComputationError(f"NaN in key-rate pipeline at T={ch.T}, xi={ch.xi}: {vals}")
    out = SKRBreakdown(n_mean=m.n_mean, Z=m.Z, beta=cfg.beta, fock_cutoff=m.fock_cutoff, **vals)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(out.to_json())
    return out


def compute_skr(c: Constellation, ch: ChannelParams, cfg: ProtocolConfig | None = None) -> SKRBreakdown:
    cfg = cfg or ProtocolConfig()
    return skr_from_moments(constellation_moments(c, cfg), ch, cfg)
