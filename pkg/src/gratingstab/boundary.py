"""Quasi-periodic traces on the artificial boundary x2 = b.

A trace is stored by its coefficients v_n of exp(i*alpha_n*x1), n = -N..N.
Everything here is diagonal in that basis: the DtN map, the dual weighted
norms, the frequency split and the Rayleigh amplitudes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModeSetMismatch, ResonantMode
from .modes import ModeSet, PlaneWaveConfig

# Evanescent amplitudes are reported absent past this growth exponent.
MAX_AMPLIFICATION_EXPONENT = 30.0

# Squared sine/cosine coefficients carry twice the exponential ones.
_SINCOS_FACTOR = 2.0


@dataclass(frozen=True)
class BoundaryTrace:
    modes: ModeSet
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.shape != (len(self.modes),):
            raise ValueError(
                f"expected {len(self.modes)} coefficients, got shape {coeffs.shape}"
            )
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, modes: ModeSet) -> "BoundaryTrace":
        return cls(modes, np.zeros(len(modes), dtype=complex))

    @classmethod
    def delta(cls, modes: ModeSet, n: int, value: complex = 1.0) -> "BoundaryTrace":
        c = np.zeros(len(modes), dtype=complex)
        c[modes.index(n)] = value
        return cls(modes, c)

    @classmethod
    def from_periodic_samples(cls, modes: ModeSet, w: np.ndarray) -> "BoundaryTrace":
        """Coefficients of u = exp(i*alpha*x1) * w from M uniform samples of w."""
        w = np.asarray(w, dtype=complex)
        M = w.shape[0]
        if M < len(modes):
            raise ValueError(f"{M} samples cannot resolve {len(modes)} modes")
        spectrum = np.fft.fft(w) / M
        return cls(modes, spectrum[modes.n % M])

    def _check(self, other: "BoundaryTrace"):
        if not self.modes.same_as(other.modes):
            raise ModeSetMismatch("traces live on different mode sets")

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return BoundaryTrace(self.modes, self.coeffs + other.coeffs)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check(other)
        return BoundaryTrace(self.modes, self.coeffs - other.coeffs)

    def scaled(self, factor: complex) -> "BoundaryTrace":
        return BoundaryTrace(self.modes, factor * self.coeffs)

    def evaluate(self, x1) -> np.ndarray:
        """Reconstruct the trace at points x1."""
        x1 = np.asarray(x1, dtype=float)
        phase = np.exp(1j * np.multiply.outer(x1, self.modes.alpha_n))
        return phase @ self.coeffs

    def l2_norm(self) -> float:
        """L2(Gamma) norm by Parseval."""
        Lambda = self.modes.config.Lambda
        return math.sqrt(Lambda * float(np.sum(np.abs(self.coeffs) ** 2)))

    def inner(self, other: "BoundaryTrace") -> complex:
        """Integral over Gamma of self * conj(other)."""
        self._check(other)
        Lambda = self.modes.config.Lambda
        return complex(Lambda * np.sum(self.coeffs * np.conj(other.coeffs)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "re", "im"])
        for n, c in zip(self.modes.n, self.coeffs):
            writer.writerow([int(n), repr(float(c.real)), repr(float(c.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, modes: ModeSet, text: str) -> "BoundaryTrace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["n", "re", "im"]:
            raise ValueError("trace CSV must start with header n,re,im")
        coeffs = np.zeros(len(modes), dtype=complex)
        orders = [int(r[0]) for r in rows[1:]]
        if orders != list(modes.n):
            raise ValueError("trace CSV orders do not match the mode set")
        for i, r in enumerate(rows[1:]):
            coeffs[i] = complex(float(r[1]), float(r[2]))
        return cls(modes, coeffs)


@dataclass(frozen=True)
class RayleighAmplitudes:
    """Scattered-field amplitudes A_n; NaN marks an order reported absent."""

    modes: ModeSet
    amps: np.ndarray = field(repr=False)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.amps)


def dual_weights(modes: ModeSet) -> np.ndarray:
    """sqrt|k^2 - alpha_n^2| + 1/b."""
    k = modes.config.k
    return np.sqrt(np.abs(k * k - modes.alpha_n**2)) + 1.0 / modes.config.b


def apply_dtn(v: BoundaryTrace) -> BoundaryTrace:
    """(Tv)_n = i * beta_n * v_n."""
    return BoundaryTrace(v.modes, 1j * v.modes.beta_n * v.coeffs)


def incident_trace(modes: ModeSet) -> BoundaryTrace:
    """Trace of the incident wave on Gamma."""
    cfg = modes.config
    return BoundaryTrace.delta(modes, 0, np.exp(-1j * cfg.beta * cfg.b))


def boundary_source(modes: ModeSet) -> BoundaryTrace:
    """g = d_nu u_i - T u_i = -2i*beta*exp(i*alpha*x1 - i*beta*b)."""
    cfg = modes.config
    return BoundaryTrace.delta(modes, 0, -2j * cfg.beta * np.exp(-1j * cfg.beta * cfg.b))


def source_norm(config: PlaneWaveConfig) -> float:
    """||g||_{L2(Gamma)} = 2*beta*sqrt(Lambda)."""
    return 2.0 * config.beta * math.sqrt(config.Lambda)


def norm_A(v: BoundaryTrace) -> float:
    """Weighted norm dual to ``norm_B``, behaving like H^{-1/2}."""
    w = dual_weights(v.modes)
    return math.sqrt(_SINCOS_FACTOR * float(np.sum(np.abs(v.coeffs) ** 2 / w)))


def norm_B(v: BoundaryTrace) -> float:
    w = dual_weights(v.modes)
    return math.sqrt(_SINCOS_FACTOR * float(np.sum(np.abs(v.coeffs) ** 2 * w)))


def split_LH(v: BoundaryTrace) -> tuple[BoundaryTrace, BoundaryTrace]:
    """Split into propagating (|alpha_n| < k) and evanescent parts.

    Raises:
        ResonantMode: if some order sits exactly at |alpha_n| = k.
    """
    abs_alpha = np.abs(v.modes.alpha_n)
    k = v.modes.config.k
    if np.any(abs_alpha == k):
        raise ResonantMode(f"order with |alpha_n| == k={k}")
    low_mask = abs_alpha < k
    low = np.where(low_mask, v.coeffs, 0)
    high = np.where(low_mask, 0, v.coeffs)
    return BoundaryTrace(v.modes, low), BoundaryTrace(v.modes, high)


def check_lemma_sqrtk(v: BoundaryTrace, eps: float) -> float:
    """Margin of Lambda*sum sqrt|k^2-alpha_n^2| |v_n|^2 >= sqrt(eps*k) ||v||^2.

    Nonnegative for every trace when eps is the resonance distance of the
    mode set.
    """
    modes = v.modes
    k = modes.config.k
    Lambda = modes.config.Lambda
    power = np.abs(v.coeffs) ** 2
    lhs = Lambda * float(np.sum(np.sqrt(np.abs(k * k - modes.alpha_n**2)) * power))
    rhs = math.sqrt(eps) * math.sqrt(k) * Lambda * float(np.sum(power))
    return lhs - rhs


def rayleigh_amplitudes(scattered: BoundaryTrace) -> RayleighAmplitudes:
    """A_n = us_n * exp(-i*beta_n*b) from the scattered-field trace."""
    modes = scattered.modes
    b = modes.config.b
    growth = modes.beta_n.imag * b
    amps = scattered.coeffs * np.exp(-1j * modes.beta_n * b)
    amps = np.where(growth > MAX_AMPLIFICATION_EXPONENT, np.nan + 0j, amps)
    return RayleighAmplitudes(modes, amps)


def efficiencies(amps: RayleighAmplitudes) -> dict[int, float]:
    """Power fraction per propagating order, (beta_n / beta) * |A_n|^2."""
    modes = amps.modes
    beta = modes.config.beta
    out = {}
    for n, a, bn, prop in zip(modes.n, amps.amps, modes.beta_n, modes.propagating):
        if prop:
            out[int(n)] = float(bn.real / beta * abs(a) ** 2)
    return out
