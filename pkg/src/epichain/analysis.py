"""Statistical comparisons between the model's layers.

Distances (L1 over shared bins, Kolmogorov-Smirnov), a uniform report type
carrying value / threshold / Monte Carlo error, and the law-of-large-numbers
convergence study that ties the particle system to the deterministic limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .courses import CourseModel
from .forward_sim import compartment_fraction, simulate
from .kernels import ContactRate, InitialCondition
from .limit_solver import LimitSolution, compartment_curve, solve_delay
from .rng import derive_seed

DEFAULT_TIME_POINTS = 64
DEFAULT_AGE_BINS = 64


@dataclass(frozen=True)
class Histogram:
    """Density histogram: values are per-unit mass, so sum(density * width)
    is the total probability captured by the binning."""

    edges: np.ndarray
    density: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=float)
        density = np.asarray(self.density, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing with at least two entries")
        if density.shape != (edges.size - 1,):
            raise ValueError("density must have one entry per bin")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "density", density)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * self.widths))


def histogram_from_samples(samples: np.ndarray, edges: np.ndarray,
                           weights: np.ndarray | None = None) -> Histogram:
    """Normalized histogram of the samples (weighted if given); mass outside
    the edges is dropped, normalization is by total weight including it, so
    two histograms remain comparable when tails escape the range."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("need at least one sample")
    counts, edges = np.histogram(samples, bins=edges, weights=weights)
    total = float(samples.size) if weights is None else float(np.sum(weights))
    if total <= 0:
        raise ValueError("total weight must be positive")
    return Histogram(edges=edges, density=counts / total / np.diff(edges))


def histogram_from_density(pdf, edges: np.ndarray) -> Histogram:
    """Bin-averaged exact density (Simpson on each cell)."""
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    mass = (np.asarray(pdf(lo)) + 4.0 * np.asarray(pdf(mid)) + np.asarray(pdf(hi))) / 6.0
    return Histogram(edges=edges, density=mass)


def l1_histogram_distance(h1: Histogram, h2: Histogram) -> float:
    """Integral of |h1 - h2| over the shared binning; 2 for disjoint unit
    masses, 0 for identical histograms."""
    if h1.edges.shape != h2.edges.shape or not np.allclose(h1.edges, h2.edges, rtol=0.0, atol=1e-12):
        raise ValueError("histograms are binned on different grids")
    return float(np.sum(np.abs(h1.density - h2.density) * h1.widths))


def ks_distance(samples: np.ndarray, cdf) -> float:
    """sup_x |empirical CDF - cdf(x)|, evaluated at the jump points."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if n == 0:
        raise ValueError("need at least one sample")
    f = np.asarray(cdf(samples), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(np.max(upper), np.max(lower)))


@dataclass(frozen=True)
class ComparisonReport:
    """One checked statistic: passes iff value <= threshold."""

    name: str
    value: float
    threshold: float
    se: float = 0.0
    n_samples: int = 0
    scenario_digest: str = ""
    detail: str = ""
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")
        object.__setattr__(self, "passed", bool(self.value <= self.threshold))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        se_part = f" se={self.se:.3g}" if self.se else ""
        return (f"[{status}] {self.name}: value={self.value:.6g} "
                f"threshold={self.threshold:.6g}{se_part}{extra}")


def combined_se(*ses: float) -> float:
    """Standard error of a sum/difference of independent estimates."""
    return math.sqrt(sum(float(s) ** 2 for s in ses))


@dataclass(frozen=True)
class ConvergenceLevel:
    n_individuals: int
    deviations: np.ndarray   # sup over the reporting grid, one per replica

    @property
    def mean_deviation(self) -> float:
        return float(np.mean(self.deviations))

    @property
    def se(self) -> float:
        d = self.deviations
        return float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0


def lln_convergence_report(model: CourseModel, contact: ContactRate, ic: InitialCondition,
                           horizon: float, sizes, replicas: int, seed: int, *,
                           sol: LimitSolution | None = None, dt: float = 0.01,
                           compartment: str | None = None,
                           n_times: int = DEFAULT_TIME_POINTS,
                           scenario_digest: str = "") -> list[ComparisonReport]:
    """Simulate at each population size and report the sup-over-grid deviation
    of a compartment fraction from the deterministic limit, plus the fitted
    scaling exponent of deviation against size (close to -1/2 when the
    particle system obeys the functional law of large numbers).

    Returns one report per size (threshold is the previous size's mean, so
    the pass flags encode monotone improvement) and a final report checking
    the exponent lies in [-0.7, -0.3].
    """
    if compartment is None:
        compartment = model.compartment_set.names[0]
    if sol is None:
        sol = solve_delay(model.kernel, contact, ic, horizon, dt)
    times = np.linspace(0.0, horizon, n_times)
    limit = np.interp(times, sol.t, compartment_curve(sol, model, compartment))

    levels: list[ConvergenceLevel] = []
    for n in sizes:
        devs = np.empty(replicas)
        for r in range(replicas):
            run_seed = derive_seed(seed, "lln", int(n), r)
            out = simulate(model, int(n), contact, ic, horizon, seed=run_seed)
            frac = compartment_fraction(out, compartment, times)
            devs[r] = float(np.max(np.abs(frac - limit)))
        levels.append(ConvergenceLevel(n_individuals=int(n), deviations=devs))

    reports: list[ComparisonReport] = []
    prev = math.inf
    for lev in levels:
        reports.append(ComparisonReport(
            name=f"lln sup deviation, N={lev.n_individuals}",
            value=lev.mean_deviation, threshold=prev, se=lev.se,
            n_samples=replicas, scenario_digest=scenario_digest,
            detail=f"compartment {compartment}"))
        prev = lev.mean_deviation

    log_n = np.log([lev.n_individuals for lev in levels])
    log_d = np.log([max(lev.mean_deviation, 1e-300) for lev in levels])
    slope = float(np.polyfit(log_n, log_d, 1)[0]) if len(levels) > 1 else math.nan
    reports.append(ComparisonReport(
        name="lln scaling exponent offset from -1/2",
        value=abs(slope + 0.5), threshold=0.2, n_samples=replicas * len(levels),
        scenario_digest=scenario_digest, detail=f"fitted exponent {slope:.3f}"))
    return reports
