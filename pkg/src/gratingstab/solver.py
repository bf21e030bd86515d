"""Fourier collocation / finite difference solver for the flattened problem.

The total field is written u = exp(i*alpha*y1) * w with w periodic.  On each
horizontal grid line y2 = j*h the unknown is the vector of discrete Fourier
coefficients of w, so the system is block tridiagonal in j with M x M
blocks.  Blocks on lines where the flattening map is the identity are
diagonal; they are stored as 1-D arrays and eliminated elementwise.

Rows:
    j = 0        w = 0 (Dirichlet on the grating surface)
    0 < j < P    d1(A11 d1 u) + d1(A12 d2 u) + d2(A12 d1 u) + d2(A22 d2 u)
                 + k^2 det(J) u = 0, spectral in y1, centred differences in y2
    j = P        (3 w_P - 4 w_{P-1} + w_{P-2}) / (2h) - T w_P = g

Interior rows are stored multiplied by h^2 and the top row by h so that all
blocks are O(1); the residual test is taken on this equilibrated system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import trapezoid
from threadpoolctl import threadpool_limits

from .boundary import BoundaryTrace, boundary_source
from .errors import GridTooCoarse, SingularSystem
from .modes import ModeSet, PlaneWaveConfig, vertical_wavenumbers
from .transform import FlatteningMap, GratingProfile, make_map

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SolverGrid:
    M: int
    P: int
    b: float

    @property
    def h2(self) -> float:
        return self.b / self.P

    def y1(self, Lambda: float) -> np.ndarray:
        return np.arange(self.M) * (Lambda / self.M)

    def y2(self) -> np.ndarray:
        return np.arange(self.P + 1) * self.h2


def check_grid(grid: SolverGrid, config: PlaneWaveConfig, modes: ModeSet):
    """Raise GridTooCoarse unless the grid resolves modes and wavelength."""
    M, P = grid.M, grid.P
    if M < 2 or M & (M - 1):
        raise GridTooCoarse(f"M={M} must be a power of two")
    if M < 2 * len(modes):
        raise GridTooCoarse(f"M={M} < 2(2N+1) = {2 * len(modes)}")
    need = 20 * config.k * config.b / (2 * math.pi)
    if P < need or P < 4:
        raise GridTooCoarse(f"P={P} < {max(need, 4):.1f} (20 points per wavelength)")
    if grid.b != config.b:
        raise GridTooCoarse("grid height differs from config.b")


def _circulant(c: np.ndarray):
    """Modal form of multiplication by the nodal values c."""
    if np.all(c == c[0]):
        return np.full(c.shape, c[0], dtype=complex)
    return scipy.linalg.circulant(np.fft.fft(c) / c.size)


def _dense(blk):
    return np.diag(blk) if blk.ndim == 1 else blk


def _add(*blocks):
    if all(b.ndim == 1 for b in blocks):
        return sum(blocks[1:], blocks[0])
    return sum((_dense(b) for b in blocks[1:]), _dense(blocks[0]))


def _lmul(d, blk):
    return d * blk if blk.ndim == 1 else d[:, None] * blk


def _rmul(blk, d):
    return blk * d if blk.ndim == 1 else blk * d[None, :]


def _matmul(a, b):
    if a.ndim == 1 and b.ndim == 1:
        return a * b
    if a.ndim == 1:
        return a[:, None] * b
    if b.ndim == 1:
        return a * b[None, :]
    return a @ b


def _apply(blk, v):
    return blk * v if blk.ndim == 1 else blk @ v


class _Factor:
    """LU factor of a diagonal or dense block."""

    def __init__(self, blk):
        self.diagonal = blk.ndim == 1
        if self.diagonal:
            if np.any(blk == 0):
                raise SingularSystem("zero pivot in diagonal block")
            self.data = blk
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                try:
                    self.data = scipy.linalg.lu_factor(blk, check_finite=False)
                except (scipy.linalg.LinAlgWarning, ValueError) as exc:
                    raise SingularSystem(str(exc)) from exc

    def solve_block(self, blk):
        if self.diagonal:
            return blk / self.data if blk.ndim == 1 else blk / self.data[:, None]
        return scipy.linalg.lu_solve(self.data, _dense(blk), check_finite=False)

    def solve_vector(self, v):
        if self.diagonal:
            return v / self.data
        return scipy.linalg.lu_solve(self.data, v, check_finite=False)


@dataclass
class LinearSystem:
    """Assembled system for the modal coefficients of w on every grid line.

    Blocks are produced on demand so large problems never hold the whole
    matrix in memory; ``to_sparse`` materialises it for inspection.
    """

    config: PlaneWaveConfig
    modes: ModeSet
    grid: SolverGrid
    fmap: FlatteningMap
    alpha_grid: np.ndarray = field(repr=False)
    beta_grid: np.ndarray = field(repr=False)
    a11: np.ndarray = field(repr=False)
    a12: np.ndarray = field(repr=False)
    a22_half: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)

    @property
    def shape(self):
        n = self.grid.M * (self.grid.P + 1)
        return (n, n)

    def _c12(self, j):
        return _circulant(self.a12[:, j])

    def _c22(self, j_half):
        return _circulant(self.a22_half[:, j_half])

    def lower(self, j: int):
        """Block of row j acting on line j-1."""
        h = self.grid.h2
        P = self.grid.P
        if j == P:
            return np.full(self.grid.M, -2.0, dtype=complex)
        ia = 1j * self.alpha_grid
        return _add(
            -_lmul(ia, self._c12(j)) * (h / 2),
            -_rmul(self._c12(j - 1), ia) * (h / 2),
            self._c22(j - 1),
        )

    def diag(self, j: int):
        M, P, h = self.grid.M, self.grid.P, self.grid.h2
        if j == 0:
            return np.ones(M, dtype=complex)
        if j == P:
            return 1.5 - 1j * h * self.beta_grid
        ia = 1j * self.alpha_grid
        k2 = self.config.k ** 2
        c11 = _circulant(self.a11[:, j])
        return _add(
            _rmul(_lmul(ia, c11), ia) * h**2,
            -_add(self._c22(j), self._c22(j - 1)),
            (k2 * h**2) * c11,
        )

    def upper(self, j: int):
        """Block of row j acting on line j+1."""
        M, h = self.grid.M, self.grid.h2
        if j == 0:
            return np.zeros(M, dtype=complex)
        ia = 1j * self.alpha_grid
        return _add(
            _lmul(ia, self._c12(j)) * (h / 2),
            _rmul(self._c12(j + 1), ia) * (h / 2),
            self._c22(j),
        )

    def top_extra(self):
        """Block of row P acting on line P-2 (one-sided stencil)."""
        return np.full(self.grid.M, 0.5, dtype=complex)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the operator to modal coefficients shaped (P+1, M)."""
        P = self.grid.P
        out = np.empty_like(x, dtype=complex)
        out[0] = _apply(self.diag(0), x[0])
        for j in range(1, P):
            out[j] = (
                _apply(self.lower(j), x[j - 1])
                + _apply(self.diag(j), x[j])
                + _apply(self.upper(j), x[j + 1])
            )
        out[P] = (
            _apply(self.top_extra(), x[P - 2])
            + _apply(self.lower(P), x[P - 1])
            + _apply(self.diag(P), x[P])
        )
        return out

    def to_sparse(self) -> sp.csr_matrix:
        P = self.grid.P
        rows = [[None] * (P + 1) for _ in range(P + 1)]

        def conv(blk):
            return sp.diags(blk) if blk.ndim == 1 else sp.csr_matrix(blk)

        rows[0][0] = conv(self.diag(0))
        for j in range(1, P):
            rows[j][j - 1] = conv(self.lower(j))
            rows[j][j] = conv(self.diag(j))
            rows[j][j + 1] = conv(self.upper(j))
        rows[P][P - 2] = conv(self.top_extra())
        rows[P][P - 1] = conv(self.lower(P))
        rows[P][P] = conv(self.diag(P))
        return sp.bmat(rows, format="csr")


def assemble(
    config: PlaneWaveConfig,
    profile: GratingProfile,
    grid: SolverGrid,
    modes: ModeSet,
    gamma0: float | None = None,
    with_source: bool = True,
) -> LinearSystem:
    """Discretise the flattened Helmholtz problem.

    Raises:
        InjectivityViolated, ProfileTooSteep: from the flattening map.
        GridTooCoarse: if the grid invariants fail.
    """
    check_grid(grid, config, modes)
    if profile.Lambda != config.Lambda:
        raise ValueError("profile period differs from config.Lambda")
    fmap = make_map(profile, config.b, gamma0)
    M, P, h = grid.M, grid.P, grid.h2
    y1 = grid.y1(config.Lambda)
    y2 = grid.y2()
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    a11, a12, _ = fmap.conormal_coeffs(Y1, Y2)
    Y1h, Y2h = np.meshgrid(y1, (np.arange(P) + 0.5) * h, indexing="ij")
    _, _, a22_half = fmap.conormal_coeffs(Y1h, Y2h)

    n_grid = np.rint(np.fft.fftfreq(M, 1.0 / M))
    alpha_grid = config.alpha + 2 * math.pi * n_grid / config.Lambda
    beta_grid = vertical_wavenumbers(config.k, alpha_grid)

    rhs = np.zeros((P + 1, M), dtype=complex)
    if with_source:
        rhs[P, 0] = h * boundary_source(modes).coeffs[modes.index(0)]
    return LinearSystem(
        config, modes, grid, fmap, alpha_grid, beta_grid,
        np.asarray(a11, float), np.asarray(a12, float), np.asarray(a22_half, float), rhs,
    )


@dataclass(frozen=True)
class SolutionField:
    """Total field u at the nodes (y1_m, y2_j) of the reference rectangle."""

    grid: SolverGrid
    map: FlatteningMap
    values: np.ndarray = field(repr=False)
    config: PlaneWaveConfig
    modes: ModeSet
    residual: float = 0.0

    def periodic_part(self) -> np.ndarray:
        y1 = self.grid.y1(self.config.Lambda)
        return self.values * np.exp(-1j * self.config.alpha * y1)[:, None]


def _block_solve(system: LinearSystem) -> np.ndarray:
    P = system.grid.P
    r = system.rhs

    # Fold the P-2 coupling of the top row into row P using row P-1.
    g = _top_fold(system)
    lower_top = _add(system.lower(P), -_matmul(g, system.diag(P - 1)))
    diag_top = _add(system.diag(P), -_matmul(g, system.upper(P - 1)))
    rhs_top = r[P] - _apply(g, r[P - 1])

    xs = [None] * (P + 1)
    ys = [None] * (P + 1)
    fac = _Factor(diag_top)
    coupling = lower_top
    rt = rhs_top
    for j in range(P - 1, 0, -1):
        X = fac.solve_block(coupling)
        y = fac.solve_vector(rt)
        xs[j + 1], ys[j + 1] = X, y
        up = system.upper(j)
        S = _add(system.diag(j), -_matmul(up, X))
        rt = r[j] - _apply(up, y)
        coupling = system.lower(j)
        fac = _Factor(S)
    w = np.zeros((P + 1, system.grid.M), dtype=complex)
    w[1] = fac.solve_vector(rt)
    for j in range(1, P):
        w[j + 1] = ys[j + 1] - _apply(xs[j + 1], w[j])
    return w


def _top_fold(system: LinearSystem):
    """G = E * inv(L_{P-1}) so that row P - G * row(P-1) drops line P-2."""
    P = system.grid.P
    low = system.lower(P - 1)
    extra = system.top_extra()
    if low.ndim == 1:
        if np.any(low == 0):
            raise SingularSystem("vanishing coupling below the top row")
        return extra / low
    # E is diagonal: G = diag(E) @ inv(L)  <=>  G^T = inv(L)^T diag(E)
    return scipy.linalg.solve(low.T, np.diag(extra)).T


def solve(system: LinearSystem) -> SolutionField:
    """Direct block elimination from the DtN boundary downwards.

    Raises:
        SingularSystem: on a zero pivot or if the relative residual exceeds
            1e-10 (a discrete resonance; re-check admissibility).
    """
    with threadpool_limits(limits=1):
        w_hat = _block_solve(system)
        rnorm = np.linalg.norm(system.rhs)
        res = np.linalg.norm(system.matvec(w_hat) - system.rhs)
    rel = float(res / rnorm) if rnorm > 0 else float(res)
    if not np.isfinite(rel) or rel > RESIDUAL_TOL:
        raise SingularSystem(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL:g}")
    M = system.grid.M
    w = np.fft.ifft(w_hat, axis=1) * M
    y1 = system.grid.y1(system.config.Lambda)
    u = (w * np.exp(1j * system.config.alpha * y1)[None, :]).T
    u[:, 0] = 0.0
    return SolutionField(system.grid, system.fmap, u, system.config, system.modes, rel)


def _derivatives(field: SolutionField):
    """(d1 u, d2 u) times exp(-i*alpha*y1), in reference coordinates."""
    w = field.periodic_part()
    M = field.grid.M
    n_grid = np.rint(np.fft.fftfreq(M, 1.0 / M))
    alpha_grid = field.config.alpha + 2 * math.pi * n_grid / field.config.Lambda
    d1 = np.fft.ifft(1j * alpha_grid[:, None] * np.fft.fft(w, axis=0), axis=0)
    d2 = np.gradient(w, field.grid.h2, axis=1, edge_order=2)
    return w, d1, d2


def energy_norms(field: SolutionField) -> tuple[float, float]:
    """(||grad u||_{L2(D)}, ||u||_{L2(D)}) evaluated through the map."""
    w, d1, d2 = _derivatives(field)
    y1 = field.grid.y1(field.config.Lambda)
    Y1, Y2 = np.meshgrid(y1, field.grid.y2(), indexing="ij")
    a11, a12, a22 = field.map.conormal_coeffs(Y1, Y2)
    dens = a11 * np.abs(d1) ** 2 + 2 * a12 * np.real(d1 * np.conj(d2)) + a22 * np.abs(d2) ** 2
    Lambda = field.config.Lambda
    grad2 = Lambda * np.mean(trapezoid(dens, dx=field.grid.h2, axis=1))
    l22 = Lambda * np.mean(trapezoid(np.abs(w) ** 2 * a11, dx=field.grid.h2, axis=1))
    return math.sqrt(max(grad2, 0.0)), math.sqrt(l22)


def normal_derivative_line(field: SolutionField) -> np.ndarray:
    """One-sided second-order d2 w on the top line."""
    w = field.periodic_part()
    h = field.grid.h2
    return (3 * w[:, -1] - 4 * w[:, -2] + w[:, -3]) / (2 * h)


def boundary_traces(field: SolutionField) -> tuple[BoundaryTrace, BoundaryTrace]:
    """Dirichlet and Neumann traces on Gamma."""
    w_top = field.periodic_part()[:, -1]
    dirichlet = BoundaryTrace.from_periodic_samples(field.modes, w_top)
    neumann = BoundaryTrace.from_periodic_samples(field.modes, normal_derivative_line(field))
    return dirichlet, neumann


def green_identity(field: SolutionField) -> tuple[complex, float, float]:
    """Both sides of int_Gamma u conj(d_nu u) = int_D |grad u|^2 - k^2 |u|^2.

    Returns (boundary term, volume term, residual relative to
    ||grad u||^2 + k^2 ||u||^2).  The boundary term uses every grid mode.
    """
    w = field.periodic_part()
    M = field.grid.M
    u_hat = np.fft.fft(w[:, -1]) / M
    dn_hat = np.fft.fft(normal_derivative_line(field)) / M
    lhs = complex(field.config.Lambda * np.sum(u_hat * np.conj(dn_hat)))
    grad, l2 = energy_norms(field)
    k = field.config.k
    rhs = grad**2 - k**2 * l2**2
    scale = grad**2 + k**2 * l2**2
    return lhs, rhs, abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
