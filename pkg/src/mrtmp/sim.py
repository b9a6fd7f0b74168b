"""End-to-end planning sessions, Monte-Carlo evaluation and scaling runs."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .belief import Belief, JointBelief
from .pddl import parse_domain, parse_problem
from .roadmap import RoadmapWarning, build_roadmap, simulate_controls, write_trajectory_csv
from .scenario import RobotSpec, Scenario, default_domain_text
from .taskplan import NoPlan
from .tmp import MotionOracle, TMPPlan, plan_task_motion
from .world import Pose

log = logging.getLogger(__name__)

ROADMAP_STREAM, TRUTH_STREAM, REPLAY_STREAM, GOAL_STREAM = 0, 1, 2, 3


class AggregateFailure(RuntimeError):
    """Every session of a Monte-Carlo run failed to produce a plan."""


@dataclass
class StepSummary:
    action: str
    robots: list[str]
    paths: list[list[int]]
    cost: float
    c_u: float
    c_G: float
    c_sigma: float


@dataclass
class SessionReport:
    seed: int
    mutual: bool
    success: bool
    robots: list[str]
    goal: list[str]
    plan: list[StepSummary] = field(default_factory=list)
    total_cost: float | None = None
    errors: dict[str, list[float]] = field(default_factory=dict)
    planning_time: float = 0.0
    oracle_calls: int = 0
    expanded: int = 0
    n_updates: int = 0
    max_trace_increase: float | None = None
    max_cross_block: float = 0.0
    warnings: list[str] = field(default_factory=list)
    message: str = ""
    trajectory: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("trajectory")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        d = dict(d)
        d["plan"] = [StepSummary(**s) for s in d.get("plan", [])]
        return cls(**d)


@dataclass
class AggregateReport:
    mutual: bool
    seeds: list[int]
    sessions: int
    failed: int
    mean_errors: dict[str, list[float]]
    mean_planning_time: float
    max_planning_time: float
    reports: list[SessionReport] = field(default_factory=list)

    def worst_case_error(self, robot: str) -> float:
        return max(self.mean_errors[robot])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["reports"] = [r.to_dict() for r in self.reports]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        d = dict(d)
        d["reports"] = [SessionReport.from_dict(r) for r in d.get("reports", [])]
        return cls(**d)


def problem_text(scenario: Scenario, robots, goal) -> str:
    rooms = [r.id.lower() for r in scenario.map.regions]
    lines = ["(define (problem corridor-visit) (:domain rooms)",
             f"  (:objects {' '.join(rooms)} - room {' '.join(r.id.lower() for r in robots)} - robot)",
             "  (:init"]
    for r in robots:
        lines.append(f"    (robot_in {r.id.lower()} {scenario.robot_region(r).lower()})")
    for reg in scenario.map.regions:
        for other in reg.connected_to:
            lines.append(f"    (connected {reg.id.lower()} {other.lower()})")
    lines.append("  )")
    lines.append(f"  (:goal (and {' '.join(f'(visited {g.lower()})' for g in goal)}))")
    lines.append("  (:metric minimize (act-cost)))")
    return "\n".join(lines)


def static_pairs(robots) -> list[tuple[str, str]]:
    ids = [r.id.lower() for r in robots]
    return [(ids[i], ids[i + 1]) for i in range(0, len(ids) - 1, 2)]


def _stream(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, *map(int, extra)]))


def run_session(scenario: Scenario, seed: int, mutual: bool = True, robots=None, goal=None,
                domain_text: str | None = None, samples_per_region: int | None = None) -> SessionReport:
    """Build a roadmap, plan, then replay the plan against sampled ground truth.

    Mutual-on and mutual-off runs with the same seed share the roadmap and
    the initial ground-truth draw.
    """
    robots = tuple(robots or scenario.robots)
    goal = tuple(goal if goal is not None else scenario.goal_visited)
    ids = [r.id.lower() for r in robots]
    mutual_range = scenario.mutual_range if mutual else 0.0
    report = SessionReport(seed, mutual, False, ids, list(goal))
    world = scenario.map
    names = {r.id.lower(): r.id for r in world.regions}

    kernels.warm_up()  # JIT compilation is not planning time
    t0 = time.perf_counter()
    extra = [(r.mean, scenario.robot_region(r)) for r in robots]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RoadmapWarning)
        roadmap = build_roadmap(world, samples_per_region or scenario.samples_per_region,
                                scenario.free_samples, scenario.k_nearest,
                                _stream(seed, ROADMAP_STREAM), extra=extra)
    report.warnings = [str(w.message) for w in caught]
    if domain_text is None:
        domain_text = Path(scenario.domain_path).read_text() if scenario.domain_path else default_domain_text()
    domain = parse_domain(domain_text)
    problem = parse_problem(problem_text(scenario, robots, goal), domain)
    oracle = MotionOracle(roadmap, world, scenario.noise, scenario.weights, seed, mutual_range,
                          tuple(ids), static_pairs(robots),
                          {r.id.lower(): r.covariance for r in robots}, names, scenario.step)
    pins = tuple(range(len(robots)))
    try:
        plan, task_plan = plan_task_motion(domain, problem, oracle, pins)
    except NoPlan as exc:
        report.planning_time = time.perf_counter() - t0
        report.oracle_calls = oracle.calls
        report.message = str(exc)
        return report
    report.planning_time = time.perf_counter() - t0
    report.success = True
    report.total_cost = plan.total_cost
    report.oracle_calls = oracle.calls
    report.expanded = task_plan.expanded
    report.plan = [StepSummary(str(st.action), list(st.robots), [list(p) for p in st.paths], st.cost,
                               st.motion.c_u, st.motion.c_G, st.motion.c_sigma) for st in plan.steps]
    incs = [res.max_trace_increase for res in oracle.results.values() if res is not None and res.n_updates]
    report.n_updates = sum(res.n_updates for res in oracle.results.values() if res is not None)
    _replay(scenario, roadmap, robots, plan, seed, mutual_range, report, incs)
    report.max_trace_increase = max(incs) if incs else None
    return report


def _replay(scenario: Scenario, roadmap, robots, plan: TMPPlan, seed: int, mutual_range: float,
            report: SessionReport, incs: list) -> None:
    """Execute the plan open-loop with process noise and simulated sensing."""
    world = scenario.map
    rng = _stream(seed, TRUTH_STREAM)
    truth0 = {}
    for r in robots:
        draw = rng.standard_normal(3) * np.sqrt(np.asarray(r.cov_diag))
        truth0[r.id.lower()] = r.mean.as_array() + draw
    specs = {r.id.lower(): r for r in robots}
    errors = {rid: [float(math.hypot(*(truth0[rid][:2] - specs[rid].mean.as_array()[:2])))]
              for rid in specs}
    traj = {}
    max_cross = 0.0
    pairs = []
    for st in plan.steps:
        if st.robots not in pairs:
            pairs.append(st.robots)
    for pair in pairs:
        a, b = pair
        jb = JointBelief.from_beliefs([_belief(specs[a]), _belief(specs[b])])
        truth = np.concatenate([truth0[a], truth0[b]])
        chunks = []
        for i, st in enumerate(plan.steps):
            if st.robots != pair:
                continue
            c0 = roadmap.path_controls(st.paths[0], scenario.step)
            c1 = roadmap.path_controls(st.paths[1], scenario.step)
            means, covs, truths, _, n_upd, inc = simulate_controls(
                world, c0, c1, jb, scenario.noise, mutual_range, _stream(seed, REPLAY_STREAM, i), truth)
            report.n_updates += n_upd
            if n_upd:
                incs.append(inc)
            max_cross = max(max_cross, float(np.abs(covs[:, :3, 3:]).max(initial=0.0)))
            chunks.append((means, covs, truths))
            d = truths[1:] - means[1:]
            errors[a] += np.hypot(d[:, 0], d[:, 1]).tolist()
            errors[b] += np.hypot(d[:, 3], d[:, 4]).tolist()
            jb = JointBelief((Pose.from_array(means[-1, :3]), Pose.from_array(means[-1, 3:])), covs[-1])
            truth = truths[-1].copy()
        if chunks:
            means = np.concatenate([chunks[0][0]] + [c[0][1:] for c in chunks[1:]])
            covs = np.concatenate([chunks[0][1]] + [c[1][1:] for c in chunks[1:]])
            truths = np.concatenate([chunks[0][2]] + [c[2][1:] for c in chunks[1:]])
            traj[pair] = (means, covs, truths)
    report.errors = errors
    report.max_cross_block = max_cross
    report.trajectory = traj


def _belief(spec: RobotSpec) -> Belief:
    return Belief(spec.mean, spec.covariance)


def ragged_mean(series: list[list[float]]) -> list[float]:
    n = max((len(s) for s in series), default=0)
    out = []
    for t in range(n):
        vals = [s[t] for s in series if len(s) > t]
        out.append(float(sum(vals) / len(vals)))
    return out


def monte_carlo(scenario: Scenario, sessions: int, mutual: bool = True, base_seed: int = 0,
                **kwargs) -> AggregateReport:
    if sessions < 1:
        raise ValueError("sessions must be >= 1")
    seeds = list(range(base_seed, base_seed + sessions))
    reports = [run_session(scenario, s, mutual, **kwargs) for s in seeds]
    ok = [r for r in reports if r.success]
    if not ok:
        raise AggregateFailure(f"all {sessions} sessions failed")
    robots = ok[0].robots
    mean_errors = {rid: ragged_mean([r.errors[rid] for r in ok]) for rid in robots}
    times = [r.planning_time for r in ok]
    return AggregateReport(mutual, seeds, sessions, sessions - len(ok), mean_errors,
                           float(sum(times) / len(times)), float(max(times)), reports)


def synth_robots(scenario: Scenario, n: int) -> tuple[RobotSpec, ...]:
    """``n`` robots started pairwise in facing rooms (first row / opposite row)."""
    regions = scenario.map.regions
    template = scenario.robots[0]
    by_id = {r.id: r for r in regions}
    order = []
    for reg in regions:
        if reg.id in order:
            continue
        across = [c for c in reg.connected_to if c not in order and c != reg.id]
        order.append(reg.id)
        # pick a connected room that is not a row neighbour when possible
        partner = next((c for c in across if abs(by_id[c].polygon.centroid[1] - reg.polygon.centroid[1]) > 1e-9),
                       across[0] if across else None)
        if partner is not None:
            order.append(partner)
    out = []
    for i in range(n):
        reg = by_id[order[i % len(order)]]
        cx, cy = reg.polygon.centroid
        heading = math.atan2(scenario.map.bounds.centroid[1] - cy, 0.0) if cy != scenario.map.bounds.centroid[1] else 0.0
        out.append(RobotSpec(f"r{i + 1}", Pose(cx, cy, heading), template.cov_diag))
    return tuple(out)


def scaling_study(scenario: Scenario, mode: str, sizes, sessions: int, base_seed: int = 0,
                  rooms_for_robots: int = 8, mutual: bool = True) -> list[dict]:
    """Mean planning time per problem size.

    ``mode='rooms'``: the scenario's robots visit ``size`` random rooms.
    ``mode='robots'``: ``size`` robots visit ``rooms_for_robots`` random rooms.
    Each seed draws one room permutation and every size takes a prefix of
    it, so sizes are compared on the same roadmaps and nested goals.
    """
    if mode not in ("rooms", "robots"):
        raise ValueError("mode must be 'rooms' or 'robots'")
    region_ids = scenario.map.region_ids
    sizes = list(sizes)
    for size in sizes:
        if mode == "rooms" and not 1 <= size <= len(region_ids):
            raise ValueError(f"cannot visit {size} of {len(region_ids)} rooms")
        if mode == "robots" and (size < 2 or size % 2):
            raise ValueError("robot count must be even and >= 2")
    if mode == "robots" and not 1 <= rooms_for_robots <= len(region_ids):
        raise ValueError(f"cannot visit {rooms_for_robots} of {len(region_ids)} rooms")
    if sessions < 1:
        raise ValueError("sessions must be >= 1")
    seeds = range(base_seed, base_seed + sessions)
    perms = {s: [region_ids[i] for i in _stream(s, GOAL_STREAM).permutation(len(region_ids))] for s in seeds}
    rows = []
    for size in sizes:
        if mode == "rooms":
            robots, k = scenario.robots, size
        else:
            robots, k = synth_robots(scenario, size), rooms_for_robots
        times, ok = [], 0
        for s in seeds:
            rep = run_session(scenario, s, mutual, robots=robots, goal=perms[s][:k])
            times.append(rep.planning_time)
            ok += rep.success
            log.info("%s=%d seed=%d time=%.3fs success=%s", mode, size, s, rep.planning_time, rep.success)
        rows.append({"size": int(size), "mean_planning_time": float(np.mean(times)),
                     "max_planning_time": float(np.max(times)), "sessions": sessions, "solved": ok})
    return rows


def write_scale_outputs(rows: list[dict], mode: str, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps({"mode": mode, "rows": rows}, indent=1))
    with open(out / "scale.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["size", "mean_planning_time", "max_planning_time",
                                           "sessions", "solved"])
        w.writeheader()
        w.writerows(rows)


def write_session_outputs(report: SessionReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    path = out / "trajectory.csv"
    first = True
    for pair, (means, covs, truths) in report.trajectory.items():
        write_trajectory_csv(path, truths, means, covs, pair, append=not first)
        first = False
    if first:
        write_trajectory_csv(path, np.zeros((0, 6)), np.zeros((0, 6)), np.zeros((0, 6, 6)), ())
    write_metrics_csv(out / "metrics.csv", report.errors)


def write_metrics_csv(path, errors: dict[str, list[float]]) -> None:
    robots = list(errors)
    n = max((len(v) for v in errors.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + [f"error_{r}" for r in robots])
        for t in range(n):
            w.writerow([t] + [repr(errors[r][t]) if t < len(errors[r]) else "" for r in robots])


def write_aggregate_outputs(agg: AggregateReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(agg.to_dict(), indent=1))
    write_metrics_csv(out / "metrics.csv", agg.mean_errors)
