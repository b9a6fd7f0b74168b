"""Semantic attachment between the task planner and the belief roadmap.

The task planner sees ``goto_room`` actions whose cost is an external
variable. Expanding one hands its ``triggered`` bindings to the motion layer,
which simulates the robot pair over the roadmap and returns the cheapest
weighted cost. The search context carried along a plan is the tuple of
pinned roadmap nodes, one per robot.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .belief import NoiseModel
from .pddl import Domain, Problem
from .roadmap import (DEFAULT_STEP, CostWeights, InfeasibleAction, MotionResult, PathQuery, Roadmap,
                      evaluate_goto_cost, total_cost)
from .taskplan import GroundAction, TaskPlan, TaskState, ground, search_optimal_plan
from .world import WorldMap

__all__ = ["CostWeights", "total_cost", "StateMapping", "DomainModelError", "phi",
           "external_cost", "MotionOracle", "TMPPlan", "TMPStep", "assemble_plan",
           "ExternalVariableLedger", "plan_task_motion"]


class DomainModelError(ValueError):
    """Task state does not pin each robot to exactly one room."""


class ConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateMapping:
    """Roadmap node each robot's symbolic state is pinned to."""
    robots: tuple[str, ...]
    pins: tuple[int, ...]

    def node(self, robot: str) -> int:
        return self.pins[self.robots.index(robot)]

    def repin(self, updates: dict[str, int]) -> "StateMapping":
        return StateMapping(self.robots, tuple(updates.get(r, n) for r, n in zip(self.robots, self.pins)))


def robot_rooms(state: TaskState, robots) -> dict[str, str]:
    rooms: dict[str, list[str]] = {r: [] for r in robots}
    for f in state:
        if f.predicate == "robot_in" and f.args[0] in rooms:
            rooms[f.args[0]].append(f.args[1])
    for r, rs in rooms.items():
        if len(rs) != 1:
            raise DomainModelError(f"robot {r} has {len(rs)} robot_in facts: {rs}")
    return {r: rs[0] for r, rs in rooms.items()}


def phi(state: TaskState, mapping: StateMapping, roadmap: Roadmap,
        region_names: dict[str, str] | None = None) -> dict[str, set[int]]:
    """Configuration-space image of a task state, per robot.

    A robot whose pinned node lies in the room named by its ``robot_in``
    fact maps to that single node; otherwise to every instantiation of the
    room.
    """
    names = region_names or {}
    out = {}
    for r, room in robot_rooms(state, mapping.robots).items():
        rid = names.get(room, room)
        pin = mapping.node(r)
        if roadmap.node_region[pin] == rid:
            out[r] = {pin}
        else:
            out[r] = set(roadmap.region_index.get(rid, ()))
    return out


@dataclass(frozen=True)
class ExternalVariableLedger:
    direct: tuple[str, ...]
    indirect: tuple[str, ...]
    free: tuple[str, ...]
    producers: dict = field(default_factory=dict)

    @classmethod
    def from_domain(cls, domain: Domain, producer: str = "motion") -> "ExternalVariableLedger":
        v = domain.variable_classes()
        led = cls(tuple(v["direct"]), tuple(v["indirect"]), tuple(v["free"]),
                  {name: producer for name in v["indirect"]})
        missing = [n for n in led.indirect if n not in led.producers]
        if missing:
            raise ConsistencyError(f"indirect variables without a producer: {missing}")
        return led


def _stable_hash(s: str) -> int:
    return zlib.crc32(s.encode("utf-8"))


def query_seed(session_seed: int, trig: tuple[str, ...]) -> int:
    ss = np.random.SeedSequence([int(session_seed)] + [_stable_hash(t) for t in trig])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def external_cost(action: GroundAction, mapping: StateMapping, roadmap: Roadmap, world: WorldMap,
                  noise: NoiseModel, weights: CostWeights, session_seed: int,
                  mutual_range: float, start_covariances: dict | None = None,
                  region_names: dict[str, str] | None = None,
                  step: float = DEFAULT_STEP) -> tuple[float, MotionResult | None]:
    """Motion cost of a pair action; ``inf`` when it cannot be executed."""
    if action.triggered is None or len(action.triggered) != 6:
        raise ValueError(f"{action} carries no triggered tuple")
    r1, _from1, to1, r2, _from2, to2 = action.triggered
    if r1 == r2:
        return math.inf, None
    names = region_names or {}
    covs = start_covariances or {}
    q = PathQuery((mapping.node(r1), mapping.node(r2)),
                  (names.get(to1, to1), names.get(to2, to2)),
                  query_seed(session_seed, action.triggered), mutual_range,
                  (covs.get(r1), covs.get(r2)))
    try:
        res = evaluate_goto_cost(roadmap, world, q, noise, weights, step)
    except InfeasibleAction:
        return math.inf, None
    return res.total, res


class MotionOracle:
    """Cost callback for ``search_optimal_plan`` with memoised motion results.

    Robots listed in ``pairs`` may act together, in that order only.
    """

    def __init__(self, roadmap: Roadmap, world: WorldMap, noise: NoiseModel, weights: CostWeights,
                 session_seed: int, mutual_range: float, robots: tuple[str, ...],
                 pairs: list[tuple[str, str]], start_covariances: dict | None = None,
                 region_names: dict[str, str] | None = None, step: float = DEFAULT_STEP):
        self.step = step
        self.roadmap = roadmap
        self.world = world
        self.noise = noise
        self.weights = weights
        self.session_seed = session_seed
        self.mutual_range = mutual_range
        self.robots = tuple(robots)
        self.pairs = {tuple(p) for p in pairs}
        self.start_covariances = start_covariances or {}
        self.region_names = region_names or {}
        self.results: dict[tuple, MotionResult | None] = {}
        self.calls = 0

    def admits(self, action: GroundAction) -> bool:
        """False for actions this oracle always prices at infinity."""
        trig = action.triggered
        return trig is not None and (trig[0], trig[3]) in self.pairs

    def cache_key(self, action: GroundAction, pins: tuple[int, ...]) -> tuple:
        r1, r2 = action.triggered[0], action.triggered[3]
        m = StateMapping(self.robots, pins)
        return action.triggered, (m.node(r1), m.node(r2))

    def __call__(self, action: GroundAction, state: TaskState, pins: tuple[int, ...]):
        trig = action.triggered
        if not self.admits(action):
            return math.inf, pins
        key = self.cache_key(action, pins)
        if key not in self.results:
            self.calls += 1
            _, res = external_cost(action, StateMapping(self.robots, pins), self.roadmap, self.world,
                                   self.noise, self.weights, self.session_seed, self.mutual_range,
                                   self.start_covariances, self.region_names, self.step)
            self.results[key] = res
        res = self.results[key]
        if res is None:
            return math.inf, pins
        m = StateMapping(self.robots, pins).repin({trig[0]: res.goal_nodes[0], trig[3]: res.goal_nodes[1]})
        return res.total, m.pins


@dataclass(frozen=True)
class TMPStep:
    action: GroundAction
    robots: tuple[str, str]
    paths: tuple[tuple[int, ...], tuple[int, ...]]
    motion: MotionResult
    cost: float


@dataclass
class TMPPlan:
    steps: list[TMPStep]
    total_cost: float
    initial_pins: tuple[int, ...] = ()
    robots: tuple[str, ...] = ()

    def __len__(self):
        return len(self.steps)

    def check_continuity(self) -> None:
        pins = dict(zip(self.robots, self.initial_pins))
        for i, st in enumerate(self.steps):
            for r, p in zip(st.robots, st.paths):
                if pins.get(r, p[0]) != p[0]:
                    raise ConsistencyError(f"step {i}: robot {r} starts at {p[0]}, pinned at {pins[r]}")
                pins[r] = p[-1]


def assemble_plan(task_plan: TaskPlan, oracle: MotionOracle) -> TMPPlan:
    """Attach the cached motion result to every action of a task plan."""
    contexts = task_plan.contexts
    steps = []
    for i, (a, c) in enumerate(task_plan.steps):
        key = oracle.cache_key(a, contexts[i])
        res = oracle.results.get(key)
        if res is None:
            raise ConsistencyError(f"no cached motion for step {i} {a}")
        steps.append(TMPStep(a, (a.triggered[0], a.triggered[3]), res.paths, res, c))
    plan = TMPPlan(steps, task_plan.total_cost, tuple(contexts[0]) if contexts else (), oracle.robots)
    plan.check_continuity()
    return plan


def plan_task_motion(domain: Domain, problem: Problem, oracle: MotionOracle, initial_pins,
                     memo: bool = True) -> tuple[TMPPlan, TaskPlan]:
    actions = [a for a in ground(domain, problem.objects, problem.init) if oracle.admits(a)]
    tp = search_optimal_plan(problem, actions, oracle, context=tuple(initial_pins), memo=memo)
    return assemble_plan(tp, oracle), tp
