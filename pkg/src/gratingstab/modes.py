"""Incident-wave configuration and quasi-periodic mode algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TruncationTooSmall

EXTRA_MODES = 8


@dataclass(frozen=True)
class PlaneWaveConfig:
    """Incident plane wave u_i = exp(i*alpha*x1 - i*beta*x2) over a grating.

    Attributes:
        k: Wavenumber, positive.
        theta: Angle of incidence from the x2 axis, in (-pi/2, pi/2).
        Lambda: Grating period.
        b: Height of the artificial boundary carrying the DtN condition.
    """

    k: float
    theta: float
    Lambda: float
    b: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not abs(self.theta) < math.pi / 2:
            raise ValueError(f"theta must lie in (-pi/2, pi/2), got {self.theta}")
        if not self.Lambda > 0:
            raise ValueError(f"Lambda must be positive, got {self.Lambda}")
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")

    @property
    def alpha(self) -> float:
        return self.k * math.sin(self.theta)

    @property
    def beta(self) -> float:
        return self.k * math.cos(self.theta)


def min_truncation(config: PlaneWaveConfig) -> int:
    """Smallest N keeping two evanescent orders beyond cutoff on each side."""
    reach = config.Lambda * (config.k + abs(config.alpha)) / (2 * math.pi)
    return math.ceil(reach) + 2


def default_truncation(config: PlaneWaveConfig) -> int:
    return min_truncation(config) - 2 + EXTRA_MODES


def vertical_wavenumbers(k: float, alpha_n: np.ndarray) -> np.ndarray:
    """beta_n = sqrt(k^2 - alpha_n^2) on the branch Re >= 0, Im >= 0."""
    alpha_n = np.asarray(alpha_n, dtype=float)
    d = k * k - alpha_n * alpha_n
    root = np.sqrt(np.abs(d))
    return np.where(d >= 0, root + 0j, 1j * root)


@dataclass(frozen=True)
class ModeSet:
    """Orders n = -N..N with transverse and vertical wavenumbers."""

    config: PlaneWaveConfig
    N: int
    n: np.ndarray = field(repr=False)
    alpha_n: np.ndarray = field(repr=False)
    beta_n: np.ndarray = field(repr=False)
    epsilon: float

    def __len__(self):
        return 2 * self.N + 1

    def index(self, n: int) -> int:
        """Array position of order n."""
        if abs(n) > self.N:
            raise IndexError(f"order {n} outside -{self.N}..{self.N}")
        return n + self.N

    @property
    def propagating(self) -> np.ndarray:
        return np.abs(self.alpha_n) < self.config.k

    @property
    def evanescent(self) -> np.ndarray:
        return np.abs(self.alpha_n) > self.config.k

    def same_as(self, other: "ModeSet") -> bool:
        return other is self or (other.config == self.config and other.N == self.N)


def _orders(config: PlaneWaveConfig, N: int):
    n = np.arange(-N, N + 1)
    alpha_n = config.alpha + 2 * math.pi * n / config.Lambda
    return n, alpha_n


def make_modes(config: PlaneWaveConfig, N: int | None = None) -> ModeSet:
    """Build the truncated family of Rayleigh orders.

    Raises:
        TruncationTooSmall: if fewer than two evanescent orders sit beyond
            the propagation cutoff on either side.
    """
    if N is None:
        N = default_truncation(config)
    if N < min_truncation(config):
        raise TruncationTooSmall(
            f"N={N} < {min_truncation(config)} for k={config.k}, theta={config.theta}"
        )
    n, alpha_n = _orders(config, N)
    beta_n = vertical_wavenumbers(config.k, alpha_n)
    eps = float(np.min(np.abs(np.abs(alpha_n) - config.k)))
    for arr in (n, alpha_n, beta_n):
        arr.setflags(write=False)
    return ModeSet(config, int(N), n, alpha_n, beta_n, eps)


def resonance_distance(config: PlaneWaveConfig, N: int | None = None) -> float:
    """min_n ||alpha_n| - k|; zero at a Rayleigh-Wood anomaly."""
    if N is None:
        N = default_truncation(config)
    _, alpha_n = _orders(config, N)
    return float(np.min(np.abs(np.abs(alpha_n) - config.k)))


def literal_resonance_distance(config: PlaneWaveConfig, N: int | None = None) -> float:
    """min_n |k - alpha_n|, the one-sided quantity; diagnostics only."""
    if N is None:
        N = default_truncation(config)
    _, alpha_n = _orders(config, N)
    return float(np.min(np.abs(config.k - alpha_n)))


def is_admissible(config: PlaneWaveConfig, N: int | None, eps_min: float) -> bool:
    if not eps_min > 0:
        raise ValueError("eps_min must be positive")
    return resonance_distance(config, N) >= eps_min
