"""Wavenumber sweeps and Monte Carlo campaigns for the stability quotient.

The quotient (||grad u|| + k ||u||) / ||g|| is compared with the envelope
max(b^2 k^2 / sqrt(eps), b^3 k^(5/2)).  The constant in front is never
asserted; only ratios and fitted exponents are reported.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .boundary import source_norm
from .errors import GratingError, InsufficientData, RejectionRateExceeded
from .modes import PlaneWaveConfig, default_truncation, is_admissible, make_modes, resonance_distance
from .random_surface import KLModel, draw_xi, sample_seed, sample_surface, screen_sample
from .solver import SolverGrid, assemble, energy_norms, solve
from .transform import GratingProfile

log = logging.getLogger(__name__)

POINTS_PER_WAVELENGTH = 80
MAX_REJECTION_RATE = 0.2
MIN_FIT_RECORDS = 5

SWEEP_HEADER = ["k", "theta", "b", "eps", "g_norm", "grad_norm", "l2_norm",
                "quotient", "envelope", "branch", "M", "P", "N"]
MC_HEADER = ["sample", "seed", "quotient", "accepted"]


def grid_rule(config: PlaneWaveConfig) -> tuple[int, int, int]:
    """(M, P, N) scaled with k: default N, M the next power of two at or
    above 4(2N+1), and 80 points per wavelength in y2."""
    N = default_truncation(config)
    M = 1 << (4 * (2 * N + 1) - 1).bit_length()
    P = max(8, math.ceil(POINTS_PER_WAVELENGTH * config.k * config.b / (2 * math.pi)))
    return M, P, N


@dataclass(frozen=True)
class GridOverride:
    """grid_rule with any of M, P, N pinned; picklable for worker processes."""

    M: int | None = None
    P: int | None = None
    N: int | None = None

    def __call__(self, config: PlaneWaveConfig) -> tuple[int, int, int]:
        M, P, N = grid_rule(config)
        return self.M or M, self.P or P, self.N or N


class Envelope(NamedTuple):
    value: float
    branch: str
    reduced: bool


def envelope(k: float, b: float, eps: float) -> Envelope:
    """max(b^2 k^2 / sqrt(eps), b^3 k^2.5) with the active branch.

    ``reduced`` is the crossover test eps >= 1/(b^2 k), under which the
    k^2.5 term dominates.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    resonant = b * b * k * k / math.sqrt(eps)
    wavenumber = b**3 * k**2.5
    reduced = eps >= 1.0 / (b * b * k)
    if wavenumber >= resonant:
        return Envelope(wavenumber, "reduced", reduced)
    return Envelope(resonant, "resonant", reduced)


@dataclass(frozen=True)
class StabilityRecord:
    k: float
    theta: float
    b: float
    eps: float
    g_norm: float
    grad_norm: float
    l2_norm: float
    quotient: float
    envelope: float
    branch: str
    M: int
    P: int
    N: int

    @property
    def reduced(self) -> bool:
        return self.eps >= 1.0 / (self.b * self.b * self.k)

    @property
    def ratio(self) -> float:
        return self.quotient / self.envelope

    def row(self) -> list[str]:
        return [repr(float(getattr(self, name))) if isinstance(getattr(self, name), float)
                else str(getattr(self, name)) for name in SWEEP_HEADER]


def solve_configuration(config: PlaneWaveConfig, profile: GratingProfile, rule=grid_rule):
    """Solve once on the rule's grid; returns (field, (M, P, N))."""
    M, P, N = rule(config)
    modes = make_modes(config, N)
    system = assemble(config, profile, SolverGrid(M, P, config.b), modes)
    return solve(system), (M, P, N)


def _record(config: PlaneWaveConfig, profile: GratingProfile, rule) -> StabilityRecord:
    field_, (M, P, N) = solve_configuration(config, profile, rule)
    grad, l2 = energy_norms(field_)
    g = source_norm(config)
    eps = field_.modes.epsilon
    env = envelope(config.k, config.b, eps)
    return StabilityRecord(
        float(config.k), float(config.theta), float(config.b), float(eps), g,
        grad, l2, (grad + config.k * l2) / g, env.value, env.branch, M, P, N,
    )


def _sweep_item(args):
    config, profile, rule = args
    try:
        return _record(config, profile, rule)
    except GratingError as exc:
        return exc


def _parallel_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep(
    template: PlaneWaveConfig,
    profile: GratingProfile,
    k_grid: Sequence[float],
    eps_min: float,
    rule: Callable = grid_rule,
    workers: int = 1,
) -> list[StabilityRecord]:
    """One record per admissible k, in k_grid order.

    Inadmissible wavenumbers and per-record solver failures are logged and
    skipped.
    """
    if not eps_min > 0:
        raise ValueError("eps_min must be positive")
    ks = [float(k) for k in k_grid]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_grid must be strictly ascending")
    items = []
    for k in ks:
        config = replace(template, k=k)
        N = rule(config)[2]
        if not is_admissible(config, N, eps_min):
            log.warning("skipping k=%r: eps=%.6g < eps_min=%g",
                        k, resonance_distance(config, N), eps_min)
            continue
        items.append((config, profile, rule))
    records = []
    for (config, _, _), out in zip(items, _parallel_map(_sweep_item, items, workers)):
        if isinstance(out, Exception):
            log.error("k=%r failed: %s: %s", config.k, type(out).__name__, out)
            continue
        records.append(out)
    return records


def fit_exponent(records: Sequence[StabilityRecord]) -> tuple[float, float]:
    """Least-squares slope of log(quotient) against log(k) and its standard error.

    Only records on the reduced branch (eps >= 1/(b^2 k)) enter the fit.

    Raises:
        InsufficientData: with fewer than 5 usable records.
    """
    usable = [r for r in records if r.reduced]
    if len(usable) < MIN_FIT_RECORDS:
        raise InsufficientData(f"{len(usable)} reduced-branch records, need {MIN_FIT_RECORDS}")
    x = np.log([r.k for r in usable])
    y = np.log([r.quotient for r in usable])
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.stderr)


def fitted_constant(records: Sequence[StabilityRecord]) -> float:
    """Largest quotient/envelope ratio over the records."""
    if not records:
        raise InsufficientData("no records")
    return max(r.ratio for r in records)


@dataclass(frozen=True)
class McSample:
    sample: int
    seed: int
    quotient: float
    accepted: bool
    grad_sq: float = math.nan
    l2_sq: float = math.nan


@dataclass(frozen=True)
class McSummary:
    n_samples: int
    n_rejected: int
    mean_sq_grad: float
    mean_sq_l2: float
    stochastic_quotient: float
    ci95: float
    seed: int
    g_norm: float
    envelope: float
    branch: str
    samples: tuple = field(default=(), repr=False)

    def accepted_quotients(self) -> np.ndarray:
        return np.array([s.quotient for s in self.samples if s.accepted])


def _mc_item(args):
    config, profile, rule = args
    field_, _ = solve_configuration(config, profile, rule)
    grad, l2 = energy_norms(field_)
    return grad, l2


def _quotient_ci(grad_sq: np.ndarray, kl_sq: np.ndarray, g: float) -> float:
    """95% half-width of (sqrt(mean G) + sqrt(mean L)) / g by the delta method."""
    n = grad_sq.size
    if n < 2:
        return math.nan
    mg, ml = grad_sq.mean(), kl_sq.mean()
    cov = np.cov(np.vstack([grad_sq, kl_sq]), ddof=1) / n
    grad_vec = np.array([
        0.5 / math.sqrt(mg) if mg > 0 else 0.0,
        0.5 / math.sqrt(ml) if ml > 0 else 0.0,
    ])
    var = float(grad_vec @ cov @ grad_vec)
    return 1.959963984540054 * math.sqrt(max(var, 0.0)) / g


def monte_carlo(
    model: KLModel,
    config: PlaneWaveConfig,
    n_samples: int,
    master_seed: int,
    rule: Callable = grid_rule,
    workers: int = 1,
    eps_min: float | None = None,
) -> McSummary:
    """Plain Monte Carlo over screened KL surfaces.

    Surfaces are drawn and screened in the parent, keyed by
    (master_seed, sample index, attempt); only the solves are farmed out, so
    results do not depend on ``workers``.

    Raises:
        RejectionRateExceeded: once rejections exceed 20% of n_samples.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if model.Lambda != config.Lambda:
        raise ValueError("model period differs from config.Lambda")
    N = rule(config)[2]
    if eps_min is not None and not is_admissible(config, N, eps_min):
        raise ValueError(f"k={config.k} is not admissible at eps_min={eps_min}")

    limit = MAX_REJECTION_RATE * n_samples
    rows: list[McSample] = []
    items, seeds = [], []
    n_rejected = 0
    for i in range(n_samples):
        attempt = 0
        while True:
            seed = sample_seed(master_seed, i, attempt)
            profile = sample_surface(model, draw_xi(model, seed))
            verdict = screen_sample(profile, config.b)
            if verdict.accepted:
                break
            n_rejected += 1
            rows.append(McSample(i, seed, math.nan, False))
            log.info("sample %d attempt %d rejected: %s", i, attempt, verdict.reason)
            if n_rejected > limit:
                raise RejectionRateExceeded(
                    f"{n_rejected} rejections exceed {MAX_REJECTION_RATE:.0%} of {n_samples}"
                )
            attempt += 1
        items.append((config, profile, rule))
        seeds.append((i, seed))

    results = _parallel_map(_mc_item, items, workers)
    g = source_norm(config)
    k = config.k
    grad_sq = np.array([r[0] ** 2 for r in results])
    kl_sq = np.array([(k * r[1]) ** 2 for r in results])
    for (i, seed), (grad, l2) in zip(seeds, results):
        rows.append(McSample(i, seed, (grad + k * l2) / g, True, grad * grad, (k * l2) ** 2))
    rows.sort(key=lambda s: (s.sample, s.accepted))

    mg, ml = float(np.mean(grad_sq)), float(np.mean(kl_sq))
    env = envelope(k, config.b, resonance_distance(config, N))
    return McSummary(
        n_samples=n_samples,
        n_rejected=n_rejected,
        mean_sq_grad=mg,
        mean_sq_l2=ml,
        stochastic_quotient=(math.sqrt(mg) + math.sqrt(ml)) / g,
        ci95=_quotient_ci(grad_sq, kl_sq, g),
        seed=int(master_seed),
        g_norm=g,
        envelope=env.value,
        branch=env.branch,
        samples=tuple(rows),
    )


def sweep_csv(records: Sequence[StabilityRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def mc_csv(summary: McSummary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MC_HEADER)
    for s in summary.samples:
        writer.writerow([s.sample, s.seed, repr(float(s.quotient)), int(s.accepted)])
    return buf.getvalue()
