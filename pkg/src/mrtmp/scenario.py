"""Scenario documents: map, noise, cost weights, roadmap and robot settings."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .belief import NoiseModel
from .roadmap import CostWeights
from .world import Pose, ScenarioError, WorldMap, load_map

DEFAULT_MUTUAL_RANGE = 4.0


@dataclass(frozen=True, eq=False)
class RobotSpec:
    id: str
    mean: Pose
    cov_diag: tuple[float, float, float]

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.cov_diag)


@dataclass(frozen=True, eq=False)
class Scenario:
    map: WorldMap
    noise: NoiseModel
    weights: CostWeights
    samples_per_region: int
    free_samples: int
    k_nearest: int
    robots: tuple[RobotSpec, ...]
    goal_visited: tuple[str, ...] = ()
    mutual_range: float = DEFAULT_MUTUAL_RANGE
    step: float = 0.5
    domain_path: str | None = None
    document: dict = field(default_factory=dict, repr=False)

    def robot_region(self, robot: RobotSpec) -> str:
        reg = self.map.region_at(robot.mean.x, robot.mean.y)
        if reg is None:
            raise ScenarioError(f"robot {robot.id} does not start inside any region")
        return reg.id


def _diag(v, n, what):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what}: not numeric") from exc
    if arr.ndim == 2:
        if arr.shape != (n, n) or np.any(arr != np.diag(np.diag(arr))):
            raise ScenarioError(f"{what}: expected a {n}x{n} diagonal matrix")
        arr = np.diag(arr)
    if arr.shape != (n,):
        raise ScenarioError(f"{what}: expected {n} diagonal entries, got shape {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{what}: entries must be finite and nonnegative")
    return arr


def _get(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise ScenarioError(f"missing field '{key}' in {where}")
    return doc[key]


def load_scenario(doc: dict, base_dir: str | Path | None = None) -> Scenario:
    """Validate a scenario tree (parsed JSON) into a :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    world = load_map(_get(doc, "map", "scenario"))
    nz = _get(doc, "noise", "scenario")
    noise = NoiseModel(_diag(_get(nz, "W", "noise"), 3, "noise.W"),
                       _diag(_get(nz, "Q", "noise"), 2, "noise.Q"),
                       _diag(_get(nz, "Q_mutual", "noise"), 2, "noise.Q_mutual"))
    w = _get(doc, "weights", "scenario")
    try:
        weights = CostWeights(float(_get(w, "M_u", "weights")), float(_get(w, "M_G", "weights")),
                              float(_get(w, "M_sigma", "weights")))
    except ValueError as exc:
        raise ScenarioError(f"weights: {exc}") from exc
    prm = _get(doc, "prm", "scenario")
    spr = int(_get(prm, "samples_per_region", "prm"))
    knn = int(_get(prm, "k_nearest", "prm"))
    free = int(prm.get("free_samples", 0))
    if spr < 1 or knn < 1 or free < 0:
        raise ScenarioError("prm: samples_per_region and k_nearest must be >= 1, free_samples >= 0")
    robots = []
    for i, r in enumerate(_get(doc, "robots", "scenario")):
        rid = str(_get(r, "id", f"robots[{i}]"))
        m = _get(r, "mean", f"robot {rid}")
        if len(m) != 3:
            raise ScenarioError(f"robot {rid}: mean must be [x, y, theta]")
        cov = _diag(_get(r, "cov", f"robot {rid}"), 3, f"robot {rid} cov")
        robots.append(RobotSpec(rid, Pose(*map(float, m)), tuple(float(c) for c in cov)))
    if len({r.id.lower() for r in robots}) != len(robots):
        raise ScenarioError("robot ids must be unique (case-insensitive)")
    task = doc.get("task", {})
    goal = tuple(str(g) for g in task.get("goal_visited", ()))
    for g in goal:
        if g not in world.region_ids:
            raise ScenarioError(f"task goal references unknown region {g}")
    domain_path = task.get("domain")
    if domain_path and base_dir is not None:
        domain_path = str(Path(base_dir) / domain_path)
    sc = Scenario(world, noise, weights, spr, free, knn, tuple(robots), goal,
                  float(doc.get("mutual_range", DEFAULT_MUTUAL_RANGE)),
                  float(doc.get("step", 0.5)), domain_path, copy.deepcopy(doc))
    for r in sc.robots:
        sc.robot_region(r)
    return sc


def read_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return load_scenario(doc, base_dir=path.parent)


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("mrtmp") / "data" / name))


def corridor_document() -> dict:
    return json.loads(builtin_path("corridor.json").read_text())


def corridor_scenario() -> Scenario:
    return load_scenario(corridor_document())


def default_domain_text() -> str:
    return builtin_path("rooms_domain.pddl").read_text()
