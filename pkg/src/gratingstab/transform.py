"""Grating profiles and the flattening map onto a reference domain.

The map moves points vertically only,

    F(y1, y2) = (y1, y2 + alpha(y2 - f0(y1)) * (f(y1) - f0(y1))),

with a C1 cutoff ``alpha`` that equals 1 near the reference surface and 0
above ``gamma0``.  With f0 = 0 it pulls the grating domain back to the
rectangle [0, Lambda] x [0, b] and leaves the strip y2 >= gamma0 untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InjectivityViolated, ProfileTooSteep


@dataclass(frozen=True)
class GratingProfile:
    """A Lambda-periodic surface x2 = f(x1).

    Either a trigonometric series
    ``a0 + sum_j a_j cos(2 pi j x1 / Lambda) + b_j sin(2 pi j x1 / Lambda)``
    or uniform samples on [0, Lambda) joined by linear interpolation.
    """

    Lambda: float
    a0: float = 0.0
    a: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    b: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValueError("cosine and sine coefficient arrays differ in length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float).ravel()
            if s.size < 2:
                raise ValueError("need at least two samples")
            object.__setattr__(self, "samples", s)

    @classmethod
    def flat(cls, Lambda: float, height: float = 0.0) -> "GratingProfile":
        return cls(Lambda, a0=height)

    @classmethod
    def trig(cls, Lambda: float, a0=0.0, a=(), b=()) -> "GratingProfile":
        return cls(Lambda, a0=float(a0), a=np.asarray(a, float), b=np.asarray(b, float))

    @classmethod
    def sinusoid(cls, Lambda: float, amplitude: float, order: int = 1) -> "GratingProfile":
        """amplitude * sin(2 pi order x1 / Lambda)."""
        b = np.zeros(order)
        b[order - 1] = amplitude
        return cls(Lambda, a=np.zeros(order), b=b)

    @classmethod
    def from_samples(cls, Lambda: float, samples) -> "GratingProfile":
        return cls(Lambda, samples=np.asarray(samples, float))

    @property
    def kind(self) -> str:
        return "samples" if self.samples is not None else "trig"

    @property
    def J(self) -> int:
        return self.a.size

    def _wavenumbers(self):
        return 2 * math.pi * np.arange(1, self.J + 1) / self.Lambda

    def __call__(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if self.samples is not None:
            return self._interp(x1)[0]
        if self.J == 0:
            return np.full(x1.shape, self.a0)
        phase = np.multiply.outer(x1, self._wavenumbers())
        return self.a0 + np.cos(phase) @ self.a + np.sin(phase) @ self.b

    def derivative(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if self.samples is not None:
            return self._interp(x1)[1]
        if self.J == 0:
            return np.zeros(x1.shape)
        q = self._wavenumbers()
        phase = np.multiply.outer(x1, q)
        return -np.sin(phase) @ (q * self.a) + np.cos(phase) @ (q * self.b)

    def _interp(self, x1):
        s = self.samples
        m = s.size
        h = self.Lambda / m
        t = np.mod(x1, self.Lambda) / h
        i = np.floor(t).astype(int) % m
        frac = t - np.floor(t)
        left, right = s[i], s[(i + 1) % m]
        return left + frac * (right - left), (right - left) / h

    def _dense_values(self) -> np.ndarray:
        """Series values on max(2048, 64(J+1)) uniform points, by inverse FFT."""
        cached = self.__dict__.get("_dense_cache")
        if cached is None:
            n = max(2048, 64 * (self.J + 1))
            spec = np.zeros(n // 2 + 1, dtype=complex)
            spec[0] = n * self.a0
            spec[1 : self.J + 1] = n * (self.a - 1j * self.b) / 2
            cached = np.fft.irfft(spec, n)
            object.__setattr__(self, "_dense_cache", cached)
        return cached

    def sup_abs(self) -> float:
        """sup |f|."""
        if self.samples is not None:
            return float(np.max(np.abs(self.samples)))
        if self.J == 0:
            return abs(self.a0)
        return float(np.max(np.abs(self._dense_values())))

    def sup(self) -> float:
        """sup f."""
        if self.samples is not None:
            return float(np.max(self.samples))
        if self.J == 0:
            return self.a0
        return float(np.max(self._dense_values()))

    def lipschitz_bound(self) -> float:
        """Upper bound on ||f'||_inf (exact for samples)."""
        if self.samples is not None:
            s = self.samples
            slopes = np.diff(np.append(s, s[0])) / (self.Lambda / s.size)
            return float(np.max(np.abs(slopes)))
        return float(np.sum(self._wavenumbers() * (np.abs(self.a) + np.abs(self.b))))

    def is_flat(self) -> bool:
        if self.samples is not None:
            return bool(np.all(self.samples == 0))
        return self.a0 == 0 and not np.any(self.a) and not np.any(self.b)


def cutoff_alpha(t, gamma0: float):
    """C1 cutoff: 1 for t <= gamma0/2, 0 for t >= gamma0, cubic blend between."""
    if not gamma0 > 0:
        raise ValueError("gamma0 must be positive")
    r = np.clip((np.asarray(t, dtype=float) - gamma0 / 2) / (gamma0 / 2), 0.0, 1.0)
    return 1.0 - r * r * (3.0 - 2.0 * r)


def cutoff_alpha_derivative(t, gamma0: float):
    t = np.asarray(t, dtype=float)
    r = (t - gamma0 / 2) / (gamma0 / 2)
    inside = (r > 0) & (r < 1)
    rc = np.clip(r, 0.0, 1.0)
    return np.where(inside, -6.0 * rc * (1.0 - rc) * (2.0 / gamma0), 0.0)


def cutoff_max_slope(gamma0: float) -> float:
    return 3.0 / gamma0


def gamma0_default(profile: GratingProfile, b: float) -> float:
    """Cutoff height min(b/2, 1), provided sup|f| * 3 / gamma0 <= 1/2.

    Raises:
        ProfileTooSteep: if the profile is too tall for that cap.
    """
    top = max(profile.sup(), 0.0)
    if not b > 4 * top:
        raise ProfileTooSteep(f"b={b} must exceed 4*sup f = {4 * top}")
    gamma0 = min(b / 2, 1.0)
    if profile.sup_abs() * cutoff_max_slope(gamma0) > 0.5:
        raise ProfileTooSteep(
            f"sup|f|={profile.sup_abs():.6g} needs gamma0 >= {6 * profile.sup_abs():.6g}, "
            f"cap is {gamma0:.6g}"
        )
    return gamma0


@dataclass(frozen=True)
class FlatteningMap:
    profile: GratingProfile
    gamma0: float
    b: float
    reference: GratingProfile | None = None

    @property
    def margin(self) -> float:
        """1 - sup|f - f0| * max|alpha'|; positive for a diffeomorphism."""
        return 1.0 - self._sup_delta() * cutoff_max_slope(self.gamma0)

    def _sup_delta(self):
        if self.reference is None:
            return self.profile.sup_abs()
        x = np.linspace(0.0, self.profile.Lambda, 4097)
        return float(np.max(np.abs(self.profile(x) - self.reference(x))))

    def _ref(self, y1):
        if self.reference is None:
            z = np.zeros(np.shape(y1))
            return z, z
        return self.reference(y1), self.reference.derivative(y1)

    def forward(self, y1, y2):
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        f0, _ = self._ref(y1)
        delta = self.profile(y1) - f0
        return y1, y2 + cutoff_alpha(y2 - f0, self.gamma0) * delta

    def inverse(self, x1, x2, tol: float = 1e-14, maxiter: int = 60):
        """Invert ``forward`` by Newton iteration on the vertical coordinate."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        f0, _ = self._ref(x1)
        delta = self.profile(x1) - f0
        y2 = np.array(x2, dtype=float, copy=True)
        for _ in range(maxiter):
            t = y2 - f0
            resid = y2 + cutoff_alpha(t, self.gamma0) * delta - x2
            step = resid / (1.0 + cutoff_alpha_derivative(t, self.gamma0) * delta)
            y2 = y2 - step
            if np.max(np.abs(step), initial=0.0) < tol:
                break
        return x1, y2

    def jacobian_entries(self, y1, y2):
        """(dx2/dy1, dx2/dy2); the first row of J_F is (1, 0)."""
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        f0, df0 = self._ref(y1)
        delta = self.profile(y1) - f0
        ddelta = self.profile.derivative(y1) - df0
        t = y2 - f0
        a = cutoff_alpha(t, self.gamma0)
        da = cutoff_alpha_derivative(t, self.gamma0)
        return -da * df0 * delta + a * ddelta, 1.0 + da * delta

    def jacobian_coeffs(self, y1, y2):
        """det J_F and the inverse-metric coefficients b11, b12, b22 at y."""
        j21, j22 = self.jacobian_entries(y1, y2)
        b11 = np.ones(np.broadcast(j21, j22).shape)
        b12 = -j21 / j22
        b22 = (1.0 + j21 * j21) / (j22 * j22)
        return j22, b11, b12, b22

    def conormal_coeffs(self, y1, y2):
        """Entries of det(J_F) * B used by the divergence-form operator."""
        j21, j22 = self.jacobian_entries(y1, y2)
        return j22, -j21, (1.0 + j21 * j21) / j22


def make_map(
    profile: GratingProfile,
    b: float,
    gamma0: float | None = None,
    reference: GratingProfile | None = None,
) -> FlatteningMap:
    """Flattening map for ``profile`` below the boundary height ``b``.

    Raises:
        InjectivityViolated: if sup|f - f0| * 3 / gamma0 >= 1 or b <= gamma0.
    """
    if gamma0 is None:
        if reference is not None:
            raise ValueError("gamma0 must be given with a reference profile")
        gamma0 = gamma0_default(profile, b)
    if reference is not None and reference.Lambda != profile.Lambda:
        raise ValueError("reference and profile periods differ")
    if not b > gamma0:
        raise InjectivityViolated(f"b={b} must exceed gamma0={gamma0}")
    fmap = FlatteningMap(profile, float(gamma0), float(b), reference)
    if not fmap.margin > 0:
        raise InjectivityViolated(f"injectivity margin {fmap.margin:.6g} <= 0")
    return fmap


def jacobian_coeffs(fmap: FlatteningMap, y):
    """Convenience wrapper taking a point (y1, y2)."""
    return fmap.jacobian_coeffs(y[0], y[1])
