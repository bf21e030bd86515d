"""Karhunen-Loeve model of a random grating with Gaussian covariance.

For the stationary covariance c(t) = sigma^2 exp(-t^2 / ell^2), periodised
over one grating period, the covariance operator is diagonalised by the
real Fourier family

    1/sqrt(L),  sqrt(2/L) sin(2 pi j x / L),  sqrt(2/L) cos(2 pi j x / L),

with sine and cosine of the same j sharing the eigenvalue lambda_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveEigenvalue, ProfileTooSteep
from .transform import GratingProfile, gamma0_default

TRUNCATION_RATIO = 1e-8
NEGATIVE_TOL = 1e-12
_IMAGE_CUTOFF = math.sqrt(-math.log(1e-16))


def gaussian_covariance(tau, sigma: float, ell: float):
    tau = np.asarray(tau, dtype=float)
    return sigma**2 * np.exp(-((tau / ell) ** 2))


def periodized_covariance(tau, sigma: float, ell: float, Lambda: float):
    """Sum of c(tau + m*Lambda) over the images that exceed 1e-16 relative."""
    m_max = math.ceil(_IMAGE_CUTOFF * ell / Lambda + 0.5)
    tau = np.asarray(tau, dtype=float)
    total = np.zeros(tau.shape)
    for m in range(-m_max, m_max + 1):
        total += gaussian_covariance(tau + m * Lambda, sigma, ell)
    return total


def default_quadrature_nodes(ell: float, Lambda: float) -> int:
    n = max(512, math.ceil(16 * Lambda / ell))
    return 1 << (n - 1).bit_length()


def kl_eigenvalues(sigma: float, ell: float, Lambda: float, J: int, n_quad: int | None = None):
    """lambda_0..lambda_J by the periodic trapezoid rule.

    Raises:
        NonPositiveEigenvalue: if some lambda_j < -1e-12.
    """
    if n_quad is None:
        n_quad = default_quadrature_nodes(ell, Lambda)
    tau = -Lambda / 2 + np.arange(n_quad) * (Lambda / n_quad)
    c = periodized_covariance(tau, sigma, ell, Lambda)
    j = np.arange(J + 1)
    lam = (Lambda / n_quad) * (np.cos(2 * math.pi * np.outer(j, tau) / Lambda) @ c)
    if np.any(lam < -NEGATIVE_TOL):
        raise NonPositiveEigenvalue(f"min eigenvalue {lam.min():.3e}; refine quadrature")
    # quadrature noise floor only: clip tiny negatives, keep the sequence monotone
    return np.minimum.accumulate(np.clip(lam, 0.0, None))


def default_kl_truncation(ell: float, Lambda: float, j_max: int = 10_000) -> int:
    """Smallest J with lambda_J / lambda_0 < 1e-8."""
    lam = kl_eigenvalues(1.0, ell, Lambda, min(j_max, 64))
    while True:
        hits = np.nonzero(lam / lam[0] < TRUNCATION_RATIO)[0]
        if hits.size:
            return int(hits[0])
        if lam.size > j_max:
            raise ValueError("no truncation found below j_max")
        lam = kl_eigenvalues(1.0, ell, Lambda, 2 * lam.size)


@dataclass(frozen=True)
class KLModel:
    mean: GratingProfile
    sigma: float
    ell: float
    J: int
    lambdas: np.ndarray = field(repr=False)

    @property
    def Lambda(self) -> float:
        return self.mean.Lambda

    @property
    def n_xi(self) -> int:
        return 2 * self.J + 1

    def point_variance(self) -> float:
        """Variance of f(x) implied by the truncated expansion (x-independent)."""
        lam = self.lambdas
        return float(lam[0] / self.Lambda + 2.0 / self.Lambda * np.sum(lam[1:]))


def kl_eigenpairs(
    sigma: float,
    ell: float,
    Lambda: float,
    J: int | None = None,
    mean: GratingProfile | None = None,
) -> KLModel:
    """Eigen-data of the periodised Gaussian covariance, truncated at J."""
    if not 0 < ell < Lambda / 4:
        raise ValueError(f"need 0 < ell < Lambda/4, got ell={ell}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if J is None:
        J = default_kl_truncation(ell, Lambda)
    if J < 1:
        raise ValueError("J must be at least 1")
    if mean is None:
        mean = GratingProfile.flat(Lambda)
    if mean.kind != "trig":
        raise ValueError("the mean surface must be a trigonometric series")
    if mean.Lambda != Lambda:
        raise ValueError("mean surface period differs from Lambda")
    lam = kl_eigenvalues(sigma, ell, Lambda, J)
    lam.setflags(write=False)
    return KLModel(mean, float(sigma), float(ell), int(J), lam)


def sample_surface(model: KLModel, xi) -> GratingProfile:
    """Surface for xi = (xi_0, xi_1s, xi_1c, xi_2s, xi_2c, ...)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (model.n_xi,):
        raise ValueError(f"expected {model.n_xi} normals, got shape {xi.shape}")
    L = model.Lambda
    root = np.sqrt(model.lambdas)
    J = max(model.J, model.mean.J)
    a = np.zeros(J)
    b = np.zeros(J)
    a[: model.mean.J] += model.mean.a
    b[: model.mean.J] += model.mean.b
    scale = math.sqrt(2.0 / L) * root[1:]
    b[: model.J] += scale * xi[1::2]
    a[: model.J] += scale * xi[2::2]
    a0 = model.mean.a0 + root[0] * xi[0] / math.sqrt(L)
    return GratingProfile.trig(L, a0, a, b)


def sample_seed(master_seed: int, index: int, attempt: int = 0) -> int:
    """Seed of draw ``attempt`` for sample ``index``; independent of scheduling."""
    seq = np.random.SeedSequence([int(master_seed), int(index), int(attempt)])
    return int(seq.generate_state(1, np.uint64)[0])


def draw_xi(model: KLModel, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(model.n_xi)


@dataclass(frozen=True)
class Screen:
    accepted: bool
    reason: str | None = None


def screen_sample(profile: GratingProfile, b: float) -> Screen:
    """Accept iff sup|f| < b/4 and a cutoff with margin >= 1/2 exists."""
    height = profile.sup_abs()
    if not height < b / 4:
        return Screen(False, f"height: sup|f|={height:.6g} >= b/4={b / 4:.6g}")
    try:
        gamma0_default(profile, b)
    except ProfileTooSteep as exc:
        return Screen(False, f"injectivity: {exc}")
    return Screen(True)
