"""Probabilistic roadmap with region instantiations and belief-space edge costs."""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from . import kernels
from .belief import Control, JointBelief, NoiseModel, NumericalSingularity
from .world import Pose, SamplingExhausted, WorldMap, sample_region_poses, segments_free

DEFAULT_STEP = 0.5
PSD_TOL = 1e-10


class InfeasibleAction(RuntimeError):
    """No roadmap path reaches any goal instantiation."""


class NumericalFailure(ArithmeticError):
    """Propagated covariance left the PSD cone."""


class RoadmapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CostWeights:
    M_u: float = 1.0
    M_G: float = 1.0
    M_sigma: float = 1.0

    def __post_init__(self):
        ws = (self.M_u, self.M_G, self.M_sigma)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ValueError(f"weights must be finite and nonnegative, got {ws}")
        if not any(ws):
            raise ValueError("at least one weight must be positive")


def total_cost(c_u: float, c_G: float, c_sigma: float, w: CostWeights) -> float:
    if min(c_u, c_G, c_sigma) < 0:
        raise ValueError("cost components must be nonnegative")
    return w.M_u * c_u + w.M_G * c_G + w.M_sigma * c_sigma


class Roadmap:
    """Undirected PRM graph. Treat as immutable once built.

    ``region_index`` maps a region id to the node ids sampled inside it.
    Nodes passed as ``extra`` (robot start poses) carry a region tag in
    ``node_region`` but are not listed in ``region_index``.
    """

    def __init__(self, poses: np.ndarray, node_region: list[str | None],
                 region_index: dict[str, list[int]], edges: list[tuple[int, int]],
                 warnings_: list[str] | None = None):
        self.poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        self.poses.setflags(write=False)
        self.node_region = list(node_region)
        self.region_index = {k: list(v) for k, v in region_index.items()}
        n = len(self.poses)
        self.adjacency: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        rows, cols, vals = [], [], []
        for i, j in sorted(set((min(a, b), max(a, b)) for a, b in edges if a != b)):
            d = math.hypot(*(self.poses[j, :2] - self.poses[i, :2]))
            self.adjacency[i].append((j, d))
            self.adjacency[j].append((i, d))
            # tiny floor keeps coincident nodes connected in the sparse graph
            w = max(d, 1e-12)
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        self.graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.warnings = list(warnings_ or [])
        self._sp_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._ctrl_cache: dict[tuple[int, int, float], tuple[tuple[int, ...], np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.poses)

    def pose(self, node: int) -> Pose:
        return Pose.from_array(self.poses[node])

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(i, j, d) for i, nbrs in enumerate(self.adjacency) for j, d in nbrs if i < j]

    def shortest_paths(self, source: int) -> tuple[np.ndarray, np.ndarray]:
        if source not in self._sp_cache:
            dist, pred = dijkstra(self.graph, directed=False, indices=source,
                                  return_predecessors=True)
            self._sp_cache[source] = (dist, pred)
        return self._sp_cache[source]

    def path(self, source: int, target: int) -> tuple[int, ...] | None:
        dist, pred = self.shortest_paths(source)
        if not np.isfinite(dist[target]):
            return None
        out = [target]
        while out[-1] != source:
            out.append(int(pred[out[-1]]))
        return tuple(reversed(out))

    def path_length(self, path) -> float:
        return float(sum(math.hypot(*(self.poses[b, :2] - self.poses[a, :2]))
                         for a, b in zip(path, path[1:])))

    def path_controls(self, path, step: float = DEFAULT_STEP) -> np.ndarray:
        """Stacked ``edge_controls`` along consecutive path nodes, shape (n, 3)."""
        chunks = [edge_controls_array(self.poses[a], self.poses[b], step)
                  for a, b in zip(path, path[1:])]
        if not chunks:
            return np.zeros((0, 3))
        return np.vstack(chunks)

    def route(self, source: int, target: int, step: float = DEFAULT_STEP):
        """Cached (path, controls) for the shortest path, or None."""
        key = (source, target, step)
        if key not in self._ctrl_cache:
            p = self.path(source, target)
            self._ctrl_cache[key] = None if p is None else (p, self.path_controls(p, step))
        return self._ctrl_cache[key]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "theta", "region"])
            for i, (x, y, th) in enumerate(self.poses):
                w.writerow([i, repr(x), repr(y), repr(th), self.node_region[i] or ""])


def _knn_edges(world: WorldMap, poses: np.ndarray, k: int, oversample: int = 3) -> list[tuple[int, int]]:
    """Link every node to its ``k`` nearest neighbours reachable by a free segment.

    Candidates come from the ``oversample * k`` nearest, so nodes by a door
    still find partners on the other side of a wall.
    """
    n = len(poses)
    if n < 2:
        return []
    kk = min(oversample * k + 1, n)
    _, idx = cKDTree(poses[:, :2]).query(poses[:, :2], k=kk)
    idx = np.asarray(idx).reshape(n, kk)
    cand = sorted({(min(i, int(j)), max(i, int(j))) for i in range(n) for j in idx[i] if int(j) != i})
    ij = np.array(cand)
    ok = dict(zip(cand, segments_free(world, poses[ij[:, 0], :2], poses[ij[:, 1], :2])))
    pairs = set()
    for i in range(n):
        kept = 0
        for j in idx[i]:
            j = int(j)
            if j == i:
                continue
            e = (min(i, j), max(i, j))
            if ok[e]:
                pairs.add(e)
                kept += 1
                if kept == k:
                    break
    return sorted(pairs)


def build_roadmap(world: WorldMap, samples_per_region: int, free_samples: int, k: int,
                  rng: np.random.Generator, extra: list[tuple[Pose, str | None]] = ()) -> Roadmap:
    """Sample region instantiations and free-space poses, connect k nearest.

    Each region and the free-space sampler get their own child stream of
    ``rng``, so instantiations of one region do not depend on how many
    samples another region asked for.
    """
    if samples_per_region < 1 or k < 1 or free_samples < 0:
        raise ValueError("samples_per_region and k must be >= 1, free_samples >= 0")
    children = rng.spawn(len(world.regions) + 1)
    poses: list[Pose] = []
    node_region: list[str | None] = []
    for p, rid in extra:
        poses.append(p)
        node_region.append(rid)
    region_index: dict[str, list[int]] = {}
    for region, child in zip(world.regions, children):
        ids = []
        for p in sample_region_poses(world, region, samples_per_region, child):
            ids.append(len(poses))
            poses.append(p)
            node_region.append(region.id)
        region_index[region.id] = ids
    free_rng = children[-1]
    b = world.bounds
    got, attempts = 0, 0
    while got < free_samples:
        if attempts >= 1000 * free_samples:
            raise SamplingExhausted(f"free space: {got} of {free_samples} samples")
        attempts += 1
        x = free_rng.uniform(b.xmin, b.xmax)
        y = free_rng.uniform(b.ymin, b.ymax)
        th = free_rng.uniform(-math.pi, math.pi)
        if kernels.point_free(x, y, world._bounds_arr, world._obst_arr):
            poses.append(Pose(x, y, th))
            node_region.append(None)
            got += 1

    arr = np.array([p.as_array() for p in poses]).reshape(-1, 3)
    edges = _knn_edges(world, arr, k)

    notes = []
    rm = Roadmap(arr, node_region, region_index, edges)
    _, labels = connected_components(rm.graph, directed=False)
    tagged = [i for ids in region_index.values() for i in ids]
    comps = {}
    for i in tagged:
        comps.setdefault(int(labels[i]), []).append(i)
    if len(comps) > 1:
        isolated = sorted(i for members in comps.values() if len(members) == 1 for i in members)
        notes.append(f"region instantiations split over {len(comps)} components"
                     + (f"; isolated nodes {isolated}" if isolated else ""))
        warnings.warn(notes[-1], RoadmapWarning, stacklevel=2)
    rm.warnings = notes
    return rm


def edge_controls_array(a, b, step: float = DEFAULT_STEP) -> np.ndarray:
    """Turn-then-translate controls from pose ``a`` to pose ``b``.

    Each control turns the robot toward ``b`` and moves it at most ``step``
    along that direction; the last one also sets the heading of ``b``.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    ax, ay, ath = float(a[0]), float(a[1]), float(a[2])
    bx, by, bth = float(b[0]), float(b[1]), float(b[2])
    dist = math.hypot(bx - ax, by - ay)
    if dist == 0.0:
        dth = kernels.wrap_angle(bth - ath)
        return np.zeros((0, 3)) if dth == 0.0 else np.array([[0.0, 0.0, dth]])
    n = int(math.ceil(dist / step))
    alpha = math.atan2(by - ay, bx - ax)
    out = np.empty((n, 3))
    th = ath
    for i in range(n):
        s = step if i < n - 1 else dist - step * (n - 1)
        rel = alpha - th
        out[i, 0] = s * math.cos(rel)
        out[i, 1] = s * math.sin(rel)
        target = alpha if i < n - 1 else bth
        out[i, 2] = kernels.wrap_angle(target - th)
        th = kernels.wrap_angle(th + out[i, 2])
    return out


def edge_controls(a: Pose, b: Pose, step: float = DEFAULT_STEP) -> list[Control]:
    return [Control(*row) for row in edge_controls_array(a.as_array(), b.as_array(), step)]


@dataclass(frozen=True)
class PathQuery:
    start_nodes: tuple[int, int]
    goal_regions: tuple[str, str]
    seed: int
    mutual_range: float
    start_covariances: tuple = (None, None)


@dataclass(frozen=True, eq=False)
class MotionResult:
    """Outcome of simulating one robot pair along their roadmap paths.

    means/truths: (T+1, 6); covariances: (T+1, 6, 6); tick 0 is the start.
    """
    paths: tuple[tuple[int, ...], tuple[int, ...]]
    goal_nodes: tuple[int, int]
    means: np.ndarray
    covariances: np.ndarray
    truths: np.ndarray
    c_u: float
    c_G: float
    c_sigma: float
    total: float
    weights: CostWeights = CostWeights()
    n_updates: int = 0
    max_trace_increase: float = -math.inf
    n_controls: tuple[int, int] = (0, 0)

    @property
    def beliefs(self) -> list[JointBelief]:
        return [JointBelief((Pose.from_array(m[:3]), Pose.from_array(m[3:])), P)
                for m, P in zip(self.means, self.covariances)]

    @property
    def n_ticks(self) -> int:
        return len(self.means) - 1

    def position_errors(self) -> np.ndarray:
        """(T+1, 2) distance between mean and ground-truth position per robot."""
        d = self.truths - self.means
        return np.stack([np.hypot(d[:, 0], d[:, 1]), np.hypot(d[:, 3], d[:, 4])], axis=1)

    def max_cross_block(self) -> float:
        return float(np.abs(self.covariances[:, :3, 3:]).max(initial=0.0))

    def write_csv(self, path, robot_ids=("0", "1"), tick_offset: int = 0, append: bool = False) -> None:
        write_trajectory_csv(path, self.truths, self.means, self.covariances,
                             robot_ids, tick_offset, append)


TRAJECTORY_HEADER = (["tick", "robot", "true_x", "true_y", "true_theta",
                      "mean_x", "mean_y", "mean_theta"]
                     + [f"sigma_{i}{j}" for i in range(1, 4) for j in range(1, 4)])


def write_trajectory_csv(path, truths, means, covs, robot_ids, tick_offset=0, append=False) -> None:
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(TRAJECTORY_HEADER)
        for t in range(len(means)):
            for r, rid in enumerate(robot_ids):
                o = 3 * r
                w.writerow([t + tick_offset, rid]
                           + [repr(float(v)) for v in truths[t, o:o + 3]]
                           + [repr(float(v)) for v in means[t, o:o + 3]]
                           + [repr(float(v)) for v in covs[t, o:o + 3, o:o + 3].ravel()])


def _pad_controls(c0: np.ndarray, c1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(c0), len(c1))
    ctr = np.zeros((2, T, 3))
    ctr[0, :len(c0)] = c0
    ctr[1, :len(c1)] = c1
    return ctr, np.array([len(c0), len(c1)], dtype=np.int64)


def _simulate_raw(world: WorldMap, c0, c1, mu0, P0, noise: NoiseModel, mutual_range: float,
                  rng: np.random.Generator, truth=None):
    ctr, nc = _pad_controls(np.asarray(c0, float).reshape(-1, 3), np.asarray(c1, float).reshape(-1, 3))
    T = ctr.shape[1]
    lms = world.landmark_array.reshape(-1, 2)
    L = len(lms)
    proc = rng.standard_normal((T, 2, 3))
    lm_noise = rng.standard_normal((T, 2, L, 2))
    mut = rng.standard_normal((T, 2))
    tr0 = mu0.copy() if truth is None else np.array(truth, dtype=float)
    means, covs, truths, c_u, n_upd, max_inc, status, at = kernels.simulate_pair(
        mu0, P0, tr0, ctr, nc, noise.W_diag, noise.Q_landmark_diag, noise.Q_mutual_diag,
        lms, float(world.sensor_range), float(mutual_range), proc, lm_noise, mut)
    if status != kernels.OK:
        raise NumericalSingularity(f"innovation covariance singular at tick {at}")
    return means, covs, truths, float(c_u), int(n_upd), float(max_inc)


def _check_psd(covs: np.ndarray) -> None:
    # a covariance that went indefinite mid-run stays so; checking the end suffices
    if len(covs) > 1:
        lo = np.linalg.eigvalsh(covs[-1]).min()
        if lo < -PSD_TOL:
            raise NumericalFailure(f"covariance lost PSD (min eigenvalue {lo:.3e})")


def simulate_controls(world: WorldMap, c0: np.ndarray, c1: np.ndarray, initial: JointBelief,
                      noise: NoiseModel, mutual_range: float, rng: np.random.Generator,
                      truth: np.ndarray | None = None):
    """Run the lockstep kernel on explicit control sequences.

    Returns (means, covs, truths, c_u, n_updates, max_trace_increase).
    """
    if initial.n_robots != 2:
        raise ValueError("pair simulation needs a two-robot joint belief")
    out = _simulate_raw(world, c0, c1, initial.mean_vector(), np.array(initial.covariance),
                        noise, mutual_range, rng, truth)
    _check_psd(out[1])
    return out


def _cost_terms(roadmap, goals, means, covs, c_u, weights):
    final = means[-1]
    c_G = (math.hypot(final[0] - roadmap.poses[goals[0], 0], final[1] - roadmap.poses[goals[0], 1])
           + math.hypot(final[3] - roadmap.poses[goals[1], 0], final[4] - roadmap.poses[goals[1], 1]))
    c_sigma = float(np.trace(covs[-1]))
    return c_G, c_sigma, total_cost(c_u, c_G, c_sigma, weights)


def _make_result(roadmap, paths, raw, weights, n_controls) -> MotionResult:
    means, covs, truths, c_u, n_upd, max_inc = raw
    goals = (paths[0][-1], paths[1][-1])
    c_G, c_sigma, total = _cost_terms(roadmap, goals, means, covs, c_u, weights)
    for a in (means, covs, truths):
        a.setflags(write=False)
    return MotionResult(paths, goals, means, covs, truths, c_u, c_G, c_sigma, total, weights,
                        n_upd, max_inc, n_controls)


def propagate_pair(roadmap: Roadmap, world: WorldMap, paths, initial: JointBelief,
                   noise: NoiseModel, mutual_range: float, rng: np.random.Generator,
                   weights: CostWeights = CostWeights(), step: float = DEFAULT_STEP,
                   truth: np.ndarray | None = None) -> MotionResult:
    """Simulate both robots along their node paths in lockstep.

    Ground truth starts at ``truth`` (default: the initial means). Cost terms:
    c_u sums commanded translation, c_G sums final mean-to-goal-node distance
    over the pair, c_sigma is the trace of the final joint covariance.
    """
    paths = tuple(tuple(int(n) for n in p) for p in paths)
    if len(paths) != 2 or any(len(p) == 0 for p in paths):
        raise ValueError("need one non-empty node path per robot")
    c0 = roadmap.path_controls(paths[0], step)
    c1 = roadmap.path_controls(paths[1], step)
    return _result_from_controls(roadmap, world, paths, c0, c1, initial, noise,
                                 mutual_range, rng, weights, truth)


def _result_from_controls(roadmap, world, paths, c0, c1, initial, noise, mutual_range,
                          rng, weights, truth=None) -> MotionResult:
    raw = simulate_controls(world, c0, c1, initial, noise, mutual_range, rng, truth)
    return _make_result(roadmap, paths, raw, weights, (len(c0), len(c1)))


def initial_belief(roadmap: Roadmap, start_nodes, covariances) -> JointBelief:
    P = np.zeros((6, 6))
    for i, cov in enumerate(covariances):
        if cov is not None:
            cov = np.asarray(cov, dtype=float)
            P[3 * i:3 * i + 3, 3 * i:3 * i + 3] = np.diag(cov) if cov.ndim == 1 else cov
    return JointBelief((roadmap.pose(start_nodes[0]), roadmap.pose(start_nodes[1])), P)


def candidate_rng(seed: int, goal_nodes: tuple[int, int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF,
                                                         int(goal_nodes[0]), int(goal_nodes[1])]))


def evaluate_goto_cost(roadmap: Roadmap, world: WorldMap, query: PathQuery, noise: NoiseModel,
                       weights: CostWeights, step: float = DEFAULT_STEP) -> MotionResult:
    """Cheapest simulated motion over all goal-instantiation pairs.

    For every pair of goal nodes (one per robot) the graph-shortest paths from
    the start nodes are simulated with a stream seeded by (query seed, goal
    nodes). Ties go to the lexicographically smallest goal pair.
    """
    starts = query.start_nodes
    goal_sets = []
    for rid in query.goal_regions:
        ids = roadmap.region_index.get(rid)
        if not ids:
            raise InfeasibleAction(f"region {rid} has no instantiations")
        goal_sets.append(sorted(ids))
    routes = []
    for s, goals in zip(starts, goal_sets):
        routes.append({g: roadmap.route(s, g, step) for g in goals})
    init = initial_belief(roadmap, starts, query.start_covariances)
    mu0, P0 = init.mean_vector(), np.array(init.covariance)
    best, best_total = None, math.inf
    for g0, g1 in itertools.product(*goal_sets):
        r0, r1 = routes[0][g0], routes[1][g1]
        if r0 is None or r1 is None:
            continue
        raw = _simulate_raw(world, r0[1], r1[1], mu0, P0, noise, query.mutual_range,
                            candidate_rng(query.seed, (g0, g1)))
        total = _cost_terms(roadmap, (g0, g1), raw[0], raw[1], raw[3], weights)[2]
        if best is None or total < best_total:
            best, best_total = (r0, r1, raw), total
    if best is None:
        raise InfeasibleAction(
            f"no roadmap path from nodes {starts} to regions {query.goal_regions}")
    r0, r1, raw = best
    _check_psd(raw[1])
    return _make_result(roadmap, (r0[0], r1[0]), raw, weights, (len(r0[1]), len(r1[1])))
