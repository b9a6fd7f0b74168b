"""Known 2-D environment: rooms, landmarks, rectangular obstacles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

SEGMENT_SPACING = 0.1
DEFAULT_SENSOR_RANGE = 4.0


class ScenarioError(ValueError):
    """Invalid scenario document."""


class SamplingExhausted(RuntimeError):
    """Rejection sampling could not find free poses in a region."""


def wrap_angle(a: float) -> float:
    return kernels.wrap_angle(float(a))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "Pose":
        return cls(a[0], a[1], a[2])

    def distance(self, other: "Pose") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def centroid(self) -> tuple[float, float]:
        return 0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def overlaps(self, other: "Rect") -> bool:
        # shared edges are allowed, interiors may not intersect
        return (self.xmin < other.xmax and other.xmin < self.xmax
                and self.ymin < other.ymax and other.ymin < self.ymax)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass(frozen=True)
class Region:
    id: str
    polygon: Rect
    connected_to: tuple[str, ...] = ()


@dataclass(frozen=True)
class Landmark:
    id: str
    position: tuple[float, float]

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]


@dataclass(frozen=True)
class WorldMap:
    bounds: Rect
    obstacles: tuple[Rect, ...]
    regions: tuple[Region, ...]
    landmarks: tuple[Landmark, ...]
    sensor_range: float = DEFAULT_SENSOR_RANGE
    _bounds_arr: np.ndarray = field(init=False, repr=False, compare=False)
    _obst_arr: np.ndarray = field(init=False, repr=False, compare=False)
    _lm_arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_bounds_arr", np.array(self.bounds.as_tuple(), dtype=float))
        obst = np.array([o.as_tuple() for o in self.obstacles], dtype=float).reshape(-1, 4)
        object.__setattr__(self, "_obst_arr", obst)
        lms = np.array([lm.position for lm in self.landmarks], dtype=float).reshape(-1, 2)
        object.__setattr__(self, "_lm_arr", lms)
        for arr in (self._bounds_arr, self._obst_arr, self._lm_arr):
            arr.setflags(write=False)

    def region(self, region_id: str) -> Region:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(region_id)

    def region_at(self, x: float, y: float) -> Region | None:
        for r in self.regions:
            if r.polygon.contains(x, y):
                return r
        return None

    @property
    def region_ids(self) -> list[str]:
        return [r.id for r in self.regions]

    @property
    def landmark_array(self) -> np.ndarray:
        return self._lm_arr

    def with_sensor_range(self, sensor_range: float) -> "WorldMap":
        return WorldMap(self.bounds, self.obstacles, self.regions, self.landmarks, sensor_range)


def _rect(doc, what: str) -> Rect:
    try:
        if isinstance(doc, dict):
            r = Rect(float(doc["xmin"]), float(doc["ymin"]), float(doc["xmax"]), float(doc["ymax"]))
        else:
            xmin, ymin, xmax, ymax = (float(v) for v in doc)
            r = Rect(xmin, ymin, xmax, ymax)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{what}: expected rectangle [xmin, ymin, xmax, ymax], got {doc!r}") from exc
    if not r.area > 0 or r.xmax <= r.xmin:
        raise ScenarioError(f"{what}: degenerate rectangle {r.as_tuple()}")
    return r


def _require(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise ScenarioError(f"missing field '{key}' in {where}")
    return doc[key]


def load_map(doc: dict) -> WorldMap:
    """Validate the ``map`` section of a scenario document."""
    bounds = _rect(_require(doc, "bounds", "map"), "map.bounds")
    obstacles = tuple(_rect(o, f"map.obstacles[{i}]") for i, o in enumerate(doc.get("obstacles", [])))

    raw_regions = _require(doc, "regions", "map")
    if not raw_regions:
        raise ScenarioError("map.regions: at least one region is required")
    ids = []
    polys = {}
    links: dict[str, set[str]] = {}
    for i, r in enumerate(raw_regions):
        rid = str(_require(r, "id", f"map.regions[{i}]"))
        if rid in polys:
            raise ScenarioError(f"map.regions: duplicate id {rid}")
        poly = _rect(_require(r, "rect", f"map.regions[{i}]"), f"region {rid}")
        if not (bounds.xmin <= poly.xmin and poly.xmax <= bounds.xmax
                and bounds.ymin <= poly.ymin and poly.ymax <= bounds.ymax):
            raise ScenarioError(f"region {rid} extends outside map bounds")
        ids.append(rid)
        polys[rid] = poly
        links[rid] = set(str(c) for c in r.get("connected_to", []))
    for rid, conn in links.items():
        for other in conn:
            if other not in polys:
                raise ScenarioError(f"region {rid} connected to unknown region {other}")
            if other == rid:
                raise ScenarioError(f"region {rid} connected to itself")
    # connectivity is declared once per pair; store it symmetric
    for rid, conn in list(links.items()):
        for other in conn:
            links[other].add(rid)
    for a_i, a in enumerate(ids):
        for b in ids[a_i + 1:]:
            if polys[a].overlaps(polys[b]):
                raise ScenarioError(f"regions {a} and {b} overlap")
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in links[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != len(ids):
        raise ScenarioError(f"regions not mutually reachable: {sorted(set(ids) - seen)}")
    regions = tuple(
        Region(rid, polys[rid], tuple(sorted(links[rid], key=ids.index))) for rid in ids
    )

    landmarks = []
    for i, lm in enumerate(doc.get("landmarks", [])):
        lid = str(_require(lm, "id", f"map.landmarks[{i}]"))
        pos = _require(lm, "position", f"landmark {lid}")
        try:
            x, y = float(pos[0]), float(pos[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ScenarioError(f"landmark {lid}: bad position {pos!r}") from exc
        if not bounds.contains(x, y):
            raise ScenarioError(f"landmark {lid} at ({x}, {y}) lies outside map bounds")
        landmarks.append(Landmark(lid, (x, y)))
    if len({lm.id for lm in landmarks}) != len(landmarks):
        raise ScenarioError("map.landmarks: duplicate ids")

    sensor_range = float(doc.get("sensor_range", DEFAULT_SENSOR_RANGE))
    if not sensor_range >= 0:
        raise ScenarioError("map.sensor_range must be >= 0")
    return WorldMap(bounds, obstacles, regions, tuple(landmarks), sensor_range)


def collision_free_pose(world: WorldMap, p: Pose) -> bool:
    return bool(kernels.point_free(p.x, p.y, world._bounds_arr, world._obst_arr))


def collision_free_segment(world: WorldMap, a: Pose, b: Pose, spacing: float = SEGMENT_SPACING) -> bool:
    return bool(kernels.segment_free(a.x, a.y, b.x, b.y, world._bounds_arr, world._obst_arr, spacing))


def segments_free(world: WorldMap, a: np.ndarray, b: np.ndarray, spacing: float = SEGMENT_SPACING) -> np.ndarray:
    """Vectorised segment check over (n, 2) endpoint arrays."""
    a = np.ascontiguousarray(a, dtype=float).reshape(-1, 2)
    b = np.ascontiguousarray(b, dtype=float).reshape(-1, 2)
    return kernels.segments_free(a, b, world._bounds_arr, world._obst_arr, spacing)


def sample_region_poses(world: WorldMap, region: Region | str, n: int, rng: np.random.Generator) -> list[Pose]:
    """Draw ``n`` collision-free poses uniformly inside ``region``.

    Draws are made one at a time from ``rng``, so a request for ``n`` poses is
    a prefix of a request for more from an identically seeded stream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(region, str):
        region = world.region(region)
    poly = region.polygon
    out: list[Pose] = []
    attempts = 0
    budget = 1000 * n
    while len(out) < n:
        if attempts >= budget:
            raise SamplingExhausted(
                f"region {region.id}: found {len(out)} of {n} free poses in {budget} attempts")
        attempts += 1
        x = rng.uniform(poly.xmin, poly.xmax)
        y = rng.uniform(poly.ymin, poly.ymax)
        th = rng.uniform(-math.pi, math.pi)
        if th == -math.pi:
            th = math.pi
        if kernels.point_free(x, y, world._bounds_arr, world._obst_arr):
            out.append(Pose(x, y, th))
    return out


def visible_landmarks(world: WorldMap, p: Pose) -> list[Landmark]:
    vis = [lm for lm in world.landmarks
           if math.hypot(lm.x - p.x, lm.y - p.y) <= world.sensor_range]
    return sorted(vis, key=lambda lm: lm.id)
