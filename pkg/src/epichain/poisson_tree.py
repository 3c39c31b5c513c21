"""Sampler for the limiting two-type branching dual of the epidemic.

The root stands for a focal individual.  It gets a Poisson((1-I0)R0) number
of potential-infector subtrees, each over an edge of length W ~ nu (the
generation density), and a Poisson(I0*R0_bar) number of leaf edges straight
to initially infected individuals, carrying a (delay, initial age) pair from
the joint density G.  The infection time sigma of a node is the smallest
candidate over its children,

    sigma = min( W_i + sigma_i  over subtree edges,   Wbar_j over leaf edges ),

where a candidate only counts if its uniform mark s satisfies
s <= c(candidate), the candidate value being the calendar time of that
transmission.  B(t) = (1-I0) P(sigma <= t) solves the same delay equation as
the macroscopic cumulative incidence, which is what `estimate_B` exploits.

Randomness is counter-based: every node owns a 64-bit key, and all its draws
are fixed functions of (key, counter).  The recursive sampler and the
batched one therefore produce bit-identical sigma for the same seed, and
raising the censoring horizon never changes draws already made (monotone
coupling used by the censoring tests).

Per-node draw layout (counter -> use):
    0 -> number of subtree children K_S       1 -> number of leaf edges K_I
    2+2j, 3+2j -> edge length W_j and mark s_j of subtree child j
    2+2K_S+3m, +1, +2 -> initial age Z_m, delay Wbar_m, mark sbar_m of leaf m
Subtree child j's key is child_key(parent_key, j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .courses import CourseModel, DiseaseCourse, sample_palm_course
from .densities import GridDensity
from .kernels import ContactRate, InitialCondition, IntensityKernel, joint_delay_age_from_uniforms
from .rng import child_key, child_key_vec, keyed_u01, keyed_u01_vec, make_rng, root_key, root_key_vec

_CHUNK = 2048


def _poisson_cdf_table(lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("Poisson mean must be nonnegative")
    k_max = int(lam + 40.0 * math.sqrt(lam + 1.0) + 40.0)
    return stats.poisson.cdf(np.arange(k_max), lam)


@dataclass(frozen=True)
class TreeParams:
    """Frozen inputs of the dual tree: offspring means, densities, contact rate."""

    kernel: IntensityKernel
    ic: InitialCondition
    contact: ContactRate
    horizon: float
    s0: float
    mean_s_children: float
    mean_i_children: float
    generation: GridDensity
    s_cdf: np.ndarray
    i_cdf: np.ndarray
    node_cap: int = 10_000
    model: CourseModel | None = None


def tree_params(kernel: IntensityKernel, ic: InitialCondition, contact: ContactRate,
                horizon: float, node_cap: int = 10_000,
                model: CourseModel | None = None) -> TreeParams:
    if not math.isfinite(horizon) or horizon <= 0:
        raise ValueError("finite positive censoring horizon required")
    if node_cap < 1:
        raise ValueError("node cap must be at least 1")
    s0 = 1.0 - ic.i0
    mean_s = s0 * kernel.r0
    mean_i = ic.i0 * ic.r0_bar
    return TreeParams(
        kernel=kernel, ic=ic, contact=contact, horizon=horizon, s0=s0,
        mean_s_children=mean_s, mean_i_children=mean_i,
        generation=kernel.generation_density(),
        s_cdf=_poisson_cdf_table(mean_s), i_cdf=_poisson_cdf_table(mean_i),
        node_cap=node_cap, model=model,
    )


def _ragged_slots(counts: np.ndarray) -> np.ndarray:
    """[0..c0-1, 0..c1-1, ...] for nonnegative integer counts."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(counts)
    return np.arange(total, dtype=np.int64) - np.repeat(ends - counts, counts)


class _Level:
    __slots__ = ("key", "sample", "depth_len", "i_min", "parent_row", "edge_w", "edge_s")

    def __init__(self, key, sample, depth_len, parent_row, edge_w, edge_s):
        self.key = key
        self.sample = sample
        self.depth_len = depth_len
        self.i_min = np.full(key.size, np.inf)
        self.parent_row = parent_row
        self.edge_w = edge_w
        self.edge_s = edge_s


def _expand_chunk(p: TreeParams, keys0: np.ndarray, want_first_step: bool):
    """Forward expansion + bottom-up minimisation for one chunk of samples.

    Returns (sigma, first_step, nodes_expanded, nodes_pruned, depth).
    """
    n = keys0.size
    contact = p.contact
    levels: list[_Level] = []
    cur = _Level(keys0, np.arange(n, dtype=np.int64), np.zeros(n),
                 np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))
    per_sample_nodes = np.zeros(n, dtype=np.int64)
    nodes_pruned = 0
    root_i_value: np.ndarray | None = None
    root_i_sample: np.ndarray | None = None
    root_i_first: np.ndarray | None = None

    while cur.key.size:
        per_sample_nodes += np.bincount(cur.sample, minlength=n)
        if np.any(per_sample_nodes > p.node_cap):
            worst = int(per_sample_nodes.max())
            raise RuntimeError(
                f"node cap {p.node_cap} exceeded ({worst} nodes in one sample, "
                f"depth {len(levels)}, {int(per_sample_nodes.sum())} nodes total); "
                "edge lengths are too short relative to the horizon")
        levels.append(cur)
        k_s = np.searchsorted(p.s_cdf, keyed_u01_vec(cur.key, np.uint64(0)), side="right")
        k_i = np.searchsorted(p.i_cdf, keyed_u01_vec(cur.key, np.uint64(1)), side="right")

        # leaf edges to initially infected individuals
        rep = np.repeat(np.arange(cur.key.size, dtype=np.int64), k_i)
        if rep.size:
            slot = _ragged_slots(k_i)
            base = (2 + 2 * k_s[rep] + 3 * slot).astype(np.uint64)
            keys_rep = cur.key[rep]
            u_age = keyed_u01_vec(keys_rep, base)
            u_delay = keyed_u01_vec(keys_rep, base + np.uint64(1))
            marks = keyed_u01_vec(keys_rep, base + np.uint64(2))
            w, z = joint_delay_age_from_uniforms(p.ic, u_age, u_delay)
            ok = (marks <= contact(w)) & (cur.depth_len[rep] + w <= p.horizon)
            nodes_pruned += int(np.count_nonzero(~ok))
            np.minimum.at(cur.i_min, rep, np.where(ok, w, np.inf))
            if want_first_step and len(levels) == 1:
                root_i_value = np.where(ok, w, np.inf)
                root_i_sample = cur.sample[rep]
                root_i_first = -z

        # subtree children
        rep = np.repeat(np.arange(cur.key.size, dtype=np.int64), k_s)
        if rep.size == 0:
            break
        slot = _ragged_slots(k_s)
        keys_rep = cur.key[rep]
        w = p.generation.ppf_from_uniform(keyed_u01_vec(keys_rep, (2 + 2 * slot).astype(np.uint64)))
        s = keyed_u01_vec(keys_rep, (3 + 2 * slot).astype(np.uint64))
        depth_child = cur.depth_len[rep] + w
        keep = depth_child <= p.horizon
        nodes_pruned += int(np.count_nonzero(~keep))
        cur = _Level(
            key=child_key_vec(keys_rep, slot.astype(np.uint64))[keep],
            sample=cur.sample[rep[keep]],
            depth_len=depth_child[keep],
            parent_row=rep[keep],
            edge_w=w[keep],
            edge_s=s[keep],
        )

    # bottom-up: fold each level's sigma into its parents' minima
    root_s_cand = None
    root_s_active = None
    for k in range(len(levels) - 1, 0, -1):
        lev = levels[k]
        cand = lev.edge_w + lev.i_min
        active = lev.edge_s <= contact(cand)
        np.minimum.at(levels[k - 1].i_min, lev.parent_row, np.where(active, cand, np.inf))
        if k == 1:
            root_s_cand, root_s_active = cand, active

    sigma = np.full(n, np.inf)
    np.minimum.at(sigma, levels[0].sample, levels[0].i_min)

    first_step = None
    if want_first_step:
        first_step = np.full(n, np.nan)
        pool_val = [np.zeros(0)]
        pool_sample = [np.zeros(0, dtype=np.int64)]
        pool_first = [np.zeros(0)]
        if root_i_value is not None:
            pool_val.append(root_i_value)
            pool_sample.append(root_i_sample)
            pool_first.append(root_i_first)
        if root_s_cand is not None:
            lev = levels[1]
            pool_val.append(np.where(root_s_active, root_s_cand, np.inf))
            pool_sample.append(levels[0].sample[lev.parent_row])
            pool_first.append(lev.i_min)
        val = np.concatenate(pool_val)
        smp = np.concatenate(pool_sample)
        fst = np.concatenate(pool_first)
        hit = np.isfinite(val) & (val == sigma[smp])
        first_step[smp[hit]] = fst[hit]

    expanded = int(per_sample_nodes.sum())
    return sigma, first_step, expanded, nodes_pruned, len(levels)


def _batch_sigma(p: TreeParams, n_samples: int, seed: int, want_first_step: bool = False):
    sigma = np.empty(n_samples)
    first = np.empty(n_samples) if want_first_step else None
    for lo in range(0, n_samples, _CHUNK):
        hi = min(lo + _CHUNK, n_samples)
        keys = root_key_vec(seed, np.arange(lo, hi, dtype=np.uint64))
        sig, fst, _, _, _ = _expand_chunk(p, keys, want_first_step)
        sigma[lo:hi] = sig
        if want_first_step:
            first[lo:hi] = fst
    return sigma, first


# ---------------------------------------------------------------------------
# recursive sampler with full geodesic decoration
# ---------------------------------------------------------------------------


class _Pick:
    __slots__ = ("sigma", "kind", "edge", "z", "child")

    def __init__(self, sigma, kind, edge, z, child):
        self.sigma = sigma
        self.kind = kind      # "S", "I", or None (censored)
        self.edge = edge      # W for "S", Wbar for "I"
        self.z = z            # initial age for "I"
        self.child = child    # _Pick of the subtree child for "S"


@dataclass(frozen=True)
class GeodesicSample:
    """One sampled infection time with its decorated ancestral path.

    `path_times` runs strictly downward from sigma to -terminal_age; entry i
    is the infection time of the i-th individual along the chain (the focal
    one first).  `path_courses`, when a course model is attached to the
    params, holds the focal individual's ordinary course followed by
    size-biased courses for everyone who transmitted along the path.
    """

    sigma: float
    censored: bool
    path_times: np.ndarray
    path_courses: tuple[DiseaseCourse, ...] | None
    terminal_age: float | None
    nodes_expanded: int
    nodes_pruned: int
    max_depth: int


def _expand_scalar(p: TreeParams, key: int, depth_len: float, level: int, counters: dict) -> _Pick:
    counters["nodes"] += 1
    if counters["nodes"] > p.node_cap:
        raise RuntimeError(
            f"node cap {p.node_cap} exceeded (depth {counters['depth']}, "
            f"{counters['pruned']} pruned); edge lengths are too short relative to the horizon")
    counters["depth"] = max(counters["depth"], level)
    k_s = int(np.searchsorted(p.s_cdf, keyed_u01(key, 0), side="right"))
    k_i = int(np.searchsorted(p.i_cdf, keyed_u01(key, 1), side="right"))
    best = _Pick(math.inf, None, None, None, None)

    for m in range(k_i):
        base = 2 + 2 * k_s + 3 * m
        u_age = np.array([keyed_u01(key, base)])
        u_delay = np.array([keyed_u01(key, base + 1)])
        mark = keyed_u01(key, base + 2)
        w_arr, z_arr = joint_delay_age_from_uniforms(p.ic, u_age, u_delay)
        z, w = float(z_arr[0]), float(w_arr[0])
        if mark <= p.contact.at(w) and depth_len + w <= p.horizon:
            if w < best.sigma:
                best = _Pick(w, "I", w, z, None)
        else:
            counters["pruned"] += 1

    for j in range(k_s):
        w = float(p.generation.ppf_scalar(keyed_u01(key, 2 + 2 * j)))
        s = keyed_u01(key, 3 + 2 * j)
        child_depth = depth_len + w
        if child_depth > p.horizon:
            counters["pruned"] += 1
            continue
        child = _expand_scalar(p, child_key(key, j), child_depth, level + 1, counters)
        cand = w + child.sigma
        if s <= p.contact.at(cand) and cand < best.sigma:
            best = _Pick(cand, "S", w, None, child)
    return best


def sample_geodesic(p: TreeParams, seed: int, index: int = 0,
                    rng: np.random.Generator | None = None) -> GeodesicSample:
    """Sample one tree, returning sigma and the realised ancestral path.

    `index` selects an independent sample within the seed's stream; it lines
    up with position `index` of the batched samplers.  `rng` only feeds the
    course decoration, never the tree itself.
    """
    counters = {"nodes": 0, "pruned": 0, "depth": 0}
    root = _expand_scalar(p, root_key(seed, index), 0.0, 0, counters)
    censored = not (root.sigma <= p.horizon)
    expanded = counters["nodes"]

    if censored:
        return GeodesicSample(math.inf, True, np.zeros(0), None, None,
                              expanded, counters["pruned"], int(counters["depth"]))

    times = [root.sigma]
    edges: list[tuple[str, float, float | None]] = []
    node = root
    while node.kind == "S":
        edges.append(("S", node.edge, None))
        node = node.child
        times.append(node.sigma)
    edges.append(("I", node.edge, node.z))
    z = node.z
    times.append(-z)

    courses = None
    if p.model is not None:
        if rng is None:
            rng = make_rng(seed, "geodesic-courses", index)
        decorated = [p.model.sample_course(rng)]
        for kind, edge, z_edge in edges:
            age = edge if kind == "S" else edge + z_edge
            decorated.append(sample_palm_course(p.model, age, rng))
        courses = tuple(decorated)

    return GeodesicSample(root.sigma, False, np.asarray(times), courses, z,
                          expanded, counters["pruned"], int(counters["depth"]))


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualCurve:
    t: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    n_samples: int


def estimate_B(p: TreeParams, t_grid, n_samples: int, seed: int) -> DualCurve:
    """Monte Carlo cumulative-incidence curve B(t) = (1-I0) P(sigma <= t)."""
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples for a stable curve")
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.max() > p.horizon:
        raise ValueError("curve grid extends beyond the censoring horizon")
    sigma, _ = _batch_sigma(p, n_samples, seed)
    frac = (sigma[:, None] <= t_grid[None, :]).mean(axis=0)
    se = p.s0 * np.sqrt(frac * (1.0 - frac) / n_samples)
    return DualCurve(t=t_grid, estimate=p.s0 * frac, se=se, n_samples=n_samples)


@dataclass(frozen=True)
class FirstStepSample:
    """First backward times among samples conditioned on sigma in a window."""

    window: tuple[float, float]
    values: np.ndarray
    sigmas: np.ndarray
    n_samples: int

    @property
    def n_conditioned(self) -> int:
        return int(self.values.size)


def conditioned_first_step(p: TreeParams, t: float, delta: float,
                           n_samples: int, seed: int) -> FirstStepSample:
    """Condition on sigma in [t, t+delta] and report each sample's first
    backward time (the infector's infection time, negative if the infector
    was initially infected)."""
    if delta <= 0:
        raise ValueError("window width must be positive")
    if t + delta > p.horizon:
        raise ValueError("window extends beyond the censoring horizon")
    sigma, first = _batch_sigma(p, n_samples, seed, want_first_step=True)
    sel = (sigma >= t) & (sigma <= t + delta)
    if int(sel.sum()) < 200:
        raise RuntimeError(
            f"only {int(sel.sum())} samples landed in [{t}, {t + delta}]; "
            "increase n_samples")
    return FirstStepSample(window=(t, t + delta), values=first[sel],
                           sigmas=sigma[sel], n_samples=n_samples)


def sample_root_decorations(p: TreeParams, n_samples: int, seed: int):
    """Root-level offspring counts and edge decorations, for distributional
    diagnostics: (K_S, K_I, subtree edge lengths, leaf (delay, age) pairs)."""
    keys = root_key_vec(seed, np.arange(n_samples, dtype=np.uint64))
    k_s = np.searchsorted(p.s_cdf, keyed_u01_vec(keys, np.uint64(0)), side="right")
    k_i = np.searchsorted(p.i_cdf, keyed_u01_vec(keys, np.uint64(1)), side="right")
    rep = np.repeat(np.arange(n_samples, dtype=np.int64), k_s)
    slot = _ragged_slots(k_s)
    w = p.generation.ppf_from_uniform(keyed_u01_vec(keys[rep], (2 + 2 * slot).astype(np.uint64)))
    rep_i = np.repeat(np.arange(n_samples, dtype=np.int64), k_i)
    slot_i = _ragged_slots(k_i)
    base = (2 + 2 * k_s[rep_i] + 3 * slot_i).astype(np.uint64)
    wbar, z = joint_delay_age_from_uniforms(
        p.ic, keyed_u01_vec(keys[rep_i], base), keyed_u01_vec(keys[rep_i], base + np.uint64(1)))
    return k_s, k_i, w, wbar, z
