"""Individual disease courses.

A course bundles the two age-indexed ingredients attached to each individual:
the point process of infectious-contact ages (atoms) and the life-cycle path
through compartments, stored as (entry age, compartment) pairs.  Course
models sample i.i.d. courses, declare their mean intensity kernel, and expose
the age-marginal occupation probabilities p(a, i) when known in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import bisect
import numpy as np

from .kernels import ExponentialKernel, IntensityKernel, LatentExponentialKernel


@dataclass(frozen=True)
class CompartmentSet:
    """Compartment names plus the allowed transitions, required acyclic."""

    names: tuple[str, ...]
    transitions: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate compartment names")
        known = set(self.names)
        for src, dst in self.transitions:
            if src not in known or dst not in known:
                raise ValueError(f"transition {src}->{dst} uses unknown compartment")
        # Kahn's algorithm; leftovers mean a cycle
        out_edges: dict[str, list[str]] = {n: [] for n in self.names}
        in_deg = {n: 0 for n in self.names}
        for src, dst in self.transitions:
            out_edges[src].append(dst)
            in_deg[dst] += 1
        queue = [n for n in self.names if in_deg[n] == 0]
        seen = 0
        while queue:
            node = queue.pop()
            seen += 1
            for nxt in out_edges[node]:
                in_deg[nxt] -= 1
                if in_deg[nxt] == 0:
                    queue.append(nxt)
        if seen != len(self.names):
            raise ValueError("compartment transitions contain a cycle")

    def absorbing(self) -> tuple[str, ...]:
        sources = {src for src, _ in self.transitions}
        return tuple(n for n in self.names if n not in sources)


@dataclass(frozen=True)
class DiseaseCourse:
    """One sampled course: sorted contact ages and the compartment path."""

    atoms: np.ndarray
    entry_ages: np.ndarray
    compartments: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", np.asarray(self.atoms, dtype=float))
        object.__setattr__(self, "entry_ages", np.asarray(self.entry_ages, dtype=float))

    def validate(self, model: "CourseModel") -> None:
        if self.atoms.size and (np.any(np.diff(self.atoms) < 0) or self.atoms[0] < 0):
            raise ValueError("atoms must be sorted and nonnegative")
        if self.entry_ages.size == 0 or self.entry_ages[0] != 0.0:
            raise ValueError("compartment path must start at age 0")
        if np.any(np.diff(self.entry_ages) <= 0):
            raise ValueError("compartment entry ages must be strictly increasing")
        if len(self.compartments) != self.entry_ages.size:
            raise ValueError("entry ages and compartments must align")
        comp_set = model.compartment_set
        allowed = set(comp_set.transitions)
        for i, name in enumerate(self.compartments):
            if name not in comp_set.names:
                raise ValueError(f"unknown compartment {name!r}")
            if i and (self.compartments[i - 1], name) not in allowed:
                raise ValueError(f"transition {self.compartments[i-1]}->{name} not allowed")

    def compartment_at(self, age: float) -> str:
        idx = bisect.bisect_right(self.entry_ages, age) - 1
        if idx < 0:
            idx = 0
        return self.compartments[idx]


class CourseModel:
    """Base class for course samplers."""

    compartment_set: CompartmentSet
    kernel: IntensityKernel

    def sample_course(self, rng: np.random.Generator) -> DiseaseCourse:
        raise NotImplementedError

    def marginal_p(self, a, compartment: str) -> np.ndarray:
        """p(a, i) = P(course occupies compartment i at age a)."""
        raise NotImplementedError


class MarkovSIR(CourseModel):
    """Exponential infectious period (rate gamma), contacts at rate beta
    while infectious, then permanent recovery."""

    def __init__(self, beta: float, gamma: float, step: float = 0.01,
                 a_max: float | None = None):
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.kernel = ExponentialKernel(beta, gamma, step=step, a_max=a_max)
        self.compartment_set = CompartmentSet(("I", "R"), (("I", "R"),))

    def sample_course(self, rng: np.random.Generator) -> DiseaseCourse:
        duration = rng.exponential(1.0 / self.gamma)
        n = rng.poisson(self.beta * duration)
        atoms = np.sort(rng.random(n) * duration)
        atoms = atoms[atoms <= self.kernel.a_max]
        return DiseaseCourse(atoms, np.array([0.0, duration]), ("I", "R"))

    def marginal_p(self, a, compartment: str) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        p_i = np.exp(-self.gamma * np.minimum(a, 7e2))
        if compartment == "I":
            return p_i
        if compartment == "R":
            return 1.0 - p_i
        raise ValueError(f"unknown compartment {compartment!r}")


class MarkovSEIR(CourseModel):
    """Exponential latency (rate activation) into an exponential infectious
    period (rate recovery); contacts at rate beta while infectious."""

    def __init__(self, beta: float, activation: float, recovery: float,
                 step: float = 0.01, a_max: float | None = None):
        self.beta = float(beta)
        self.activation = float(activation)
        self.recovery = float(recovery)
        self.kernel = LatentExponentialKernel(beta, activation, recovery, step=step, a_max=a_max)
        self.compartment_set = CompartmentSet(("E", "I", "R"), (("E", "I"), ("I", "R")))

    def sample_course(self, rng: np.random.Generator) -> DiseaseCourse:
        latency = rng.exponential(1.0 / self.activation)
        duration = rng.exponential(1.0 / self.recovery)
        n = rng.poisson(self.beta * duration)
        atoms = latency + np.sort(rng.random(n) * duration)
        atoms = atoms[atoms <= self.kernel.a_max]
        return DiseaseCourse(atoms, np.array([0.0, latency, latency + duration]), ("E", "I", "R"))

    def marginal_p(self, a, compartment: str) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        lam, gam = self.activation, self.recovery
        safe = np.minimum(a, 7e2)
        p_e = np.exp(-lam * safe)
        p_i = lam / (lam - gam) * (np.exp(-gam * safe) - np.exp(-lam * safe))
        if compartment == "E":
            return p_e
        if compartment == "I":
            return p_i
        if compartment == "R":
            return 1.0 - p_e - p_i
        raise ValueError(f"unknown compartment {compartment!r}")


class PoissonCourse(CourseModel):
    """Contacts form a Poisson process with the given mean intensity; the
    life cycle stays in a single compartment (the atoms alone drive
    transmission).  Conditional on the atom count, ages are i.i.d. from the
    normalized intensity, which is exactly the Poisson-process law."""

    def __init__(self, kernel: IntensityKernel, compartment: str = "I"):
        self.kernel = kernel
        self.compartment_set = CompartmentSet((compartment,), ())
        self._compartment = compartment
        self._grid_mass = kernel.grid_mass
        self._nu = kernel.generation_density() if self._grid_mass > 0 else None

    def sample_course(self, rng: np.random.Generator) -> DiseaseCourse:
        if self._nu is None:
            atoms = np.empty(0)
        else:
            n = rng.poisson(self._grid_mass)
            atoms = np.sort(self._nu.sample(rng, n))
        return DiseaseCourse(atoms, np.array([0.0]), (self._compartment,))

    def marginal_p(self, a, compartment: str) -> np.ndarray:
        if compartment != self._compartment:
            raise ValueError(f"unknown compartment {compartment!r}")
        return np.ones_like(np.asarray(a, dtype=float))


def default_palm_window(model: CourseModel) -> float:
    """Acceptance window for Palm sampling: 1% of the mean generation time."""
    return 1e-2 * model.kernel.mean_generation_time()


_PALM_COUNT_BOUND = 8  # acceptance cap; window counts above this are astronomically rare


def sample_palm_course(model: CourseModel, age: float, rng: np.random.Generator,
                       window: float | None = None, max_proposals: int = 1_000_000) -> DiseaseCourse:
    """Sample a course conditioned (in the Palm sense) on a contact at `age`.

    Poisson courses use the exact reduced-Palm property: condition-free
    sampling plus a forced atom at `age`.  Other models use acceptance-
    rejection: propose courses, accept proportionally to the number of atoms
    in a window of width `window` around `age` (bias O(window),
    documented).
    """
    if float(np.asarray(model.kernel.value(age))) <= 0.0:
        raise ValueError(f"Palm sampling undefined at age {age}: intensity is zero there")
    if isinstance(model, PoissonCourse):
        course = model.sample_course(rng)
        atoms = np.sort(np.append(course.atoms, age))
        return DiseaseCourse(atoms, course.entry_ages, course.compartments)
    if window is None:
        window = default_palm_window(model)
    lo, hi = age - 0.5 * window, age + 0.5 * window
    for _ in range(max_proposals):
        course = model.sample_course(rng)
        count = int(np.count_nonzero((course.atoms >= lo) & (course.atoms <= hi)))
        if count and rng.random() * _PALM_COUNT_BOUND < count:
            return course
    raise RuntimeError(
        f"Palm sampling at age {age} found no acceptance in {max_proposals} proposals; "
        "widen the window or check the intensity"
    )


@dataclass(frozen=True)
class EmpiricalIntensity:
    """Histogram estimate of a model's mean intensity with per-bin errors."""

    bin_edges: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray
    n_courses: int

    def value(self, a) -> np.ndarray:
        """Piecewise-constant evaluation, zero outside the binned range."""
        a = np.asarray(a, dtype=float)
        idx = np.clip(np.searchsorted(self.bin_edges, a, side="right") - 1, 0, self.values.size - 1)
        inside = (a >= self.bin_edges[0]) & (a < self.bin_edges[-1])
        return np.where(inside, self.values[idx], 0.0)


def empirical_tau(model: CourseModel, n: int, rng: np.random.Generator,
                  grid: np.ndarray | None = None) -> EmpiricalIntensity:
    """Estimate the mean intensity by binning atoms from n sampled courses.

    Per-bin standard errors come from the across-course variance of bin
    counts, so the result is directly comparable to the declared kernel.
    """
    if n <= 1:
        raise ValueError("need at least two courses")
    if grid is None:
        grid = np.linspace(0.0, model.kernel.a_max, 65)
    grid = np.asarray(grid, dtype=float)
    n_bins = grid.size - 1
    width = grid[1] - grid[0]
    all_atoms = []
    course_ids = []
    for i in range(n):
        atoms = model.sample_course(rng).atoms
        if atoms.size:
            all_atoms.append(atoms)
            course_ids.append(np.full(atoms.size, i, dtype=np.int64))
    counts = np.zeros(n_bins)
    sq = np.zeros(n_bins)
    if all_atoms:
        atoms = np.concatenate(all_atoms)
        ids = np.concatenate(course_ids)
        bins = np.searchsorted(grid, atoms, side="right") - 1
        keep = (bins >= 0) & (bins < n_bins)
        atoms, ids, bins = atoms[keep], ids[keep], bins[keep]
        keys, mult = np.unique(ids * n_bins + bins, return_counts=True)
        key_bins = (keys % n_bins).astype(np.int64)
        np.add.at(counts, key_bins, mult)
        np.add.at(sq, key_bins, mult.astype(float) ** 2)
    mean_counts = counts / n
    var_counts = np.maximum(sq / n - mean_counts**2, 0.0)
    values = mean_counts / width
    se = np.sqrt(var_counts / n) / width
    return EmpiricalIntensity(bin_edges=grid, values=values, standard_errors=se, n_courses=n)
