"""Gaussian beliefs and EKF machinery for single and joint robot states.

Motion model is odometry-style relative-pose composition with additive
control noise expressed in the robot frame. Observations are range-bearing,
either to a known landmark or from one robot to another.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .world import Landmark, Pose, wrap_angle

SINGULAR_DISTANCE = 1e-9


class SingularGeometry(ValueError):
    """Observer and target coincide; range-bearing model is undefined."""


class NumericalSingularity(ArithmeticError):
    """Innovation covariance could not be inverted."""


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Control:
    """Displacement in the robot's current frame."""
    dx: float
    dy: float
    dtheta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dtheta)):
            raise ValueError(f"non-finite control {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta])

    @property
    def magnitude(self) -> float:
        return math.hypot(self.dx, self.dy)


ZERO_CONTROL = Control(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Measurement:
    range: float
    bearing: float
    source: str = ""

    def __post_init__(self):
        if self.range < 0:
            raise ValueError("range must be >= 0")
        object.__setattr__(self, "bearing", wrap_angle(self.bearing))

    def as_array(self) -> np.ndarray:
        return np.array([self.range, self.bearing])


@dataclass(frozen=True, eq=False)
class NoiseModel:
    W: np.ndarray
    Q_landmark: np.ndarray
    Q_mutual: np.ndarray

    def __post_init__(self):
        for name, shape in (("W", (3, 3)), ("Q_landmark", (2, 2)), ("Q_mutual", (2, 2))):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim == 1:
                m = np.diag(m)
            if m.shape != shape:
                raise ValueError(f"{name} must be {shape}, got {m.shape}")
            if np.any(m != np.diag(np.diag(m))) or np.any(np.diag(m) < 0):
                raise ValueError(f"{name} must be diagonal with nonnegative entries")
            object.__setattr__(self, name, _frozen(m))
            object.__setattr__(self, name + "_diag", np.diag(m).copy())

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(np.zeros(3), np.zeros(2), np.zeros(2))


@dataclass(frozen=True, eq=False)
class Belief:
    mean: Pose
    covariance: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.covariance, dtype=float)
        if P.shape != (3, 3):
            raise ValueError(f"covariance must be 3x3, got {P.shape}")
        object.__setattr__(self, "covariance", _frozen(_sym(P)))


@dataclass(frozen=True, eq=False)
class JointBelief:
    """Joint Gaussian over the stacked poses of several robots."""
    means: tuple[Pose, ...]
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(self.means))
        P = np.asarray(self.covariance, dtype=float)
        n = 3 * len(self.means)
        if P.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}, got {P.shape}")
        object.__setattr__(self, "covariance", _frozen(_sym(P)))

    @classmethod
    def from_beliefs(cls, beliefs: Sequence[Belief]) -> "JointBelief":
        n = len(beliefs)
        P = np.zeros((3 * n, 3 * n))
        for i, b in enumerate(beliefs):
            P[3 * i:3 * i + 3, 3 * i:3 * i + 3] = b.covariance
        return cls(tuple(b.mean for b in beliefs), P)

    @property
    def n_robots(self) -> int:
        return len(self.means)

    def mean_vector(self) -> np.ndarray:
        return np.concatenate([p.as_array() for p in self.means])

    def block(self, i: int, j: int) -> np.ndarray:
        return self.covariance[3 * i:3 * i + 3, 3 * j:3 * j + 3]

    def marginal(self, i: int) -> Belief:
        return Belief(self.means[i], self.block(i, i))

    def max_cross_block(self) -> float:
        """Largest absolute entry over all off-diagonal blocks."""
        worst = 0.0
        for i in range(self.n_robots):
            for j in range(self.n_robots):
                if i != j:
                    worst = max(worst, float(np.abs(self.block(i, j)).max()))
        return worst


def motion_mean(p: Pose, u: Control) -> Pose:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose(p.x + u.dx * c - u.dy * s,
                p.y + u.dx * s + u.dy * c,
                p.theta + u.dtheta)


def motion_jacobians(p: Pose, u: Control) -> tuple[np.ndarray, np.ndarray]:
    """Partials of ``motion_mean`` w.r.t. the pose (F) and the control (V)."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    F = np.array([[1.0, 0.0, -u.dx * s - u.dy * c],
                  [0.0, 1.0, u.dx * c - u.dy * s],
                  [0.0, 0.0, 1.0]])
    V = np.array([[c, -s, 0.0],
                  [s, c, 0.0],
                  [0.0, 0.0, 1.0]])
    return F, V


def ekf_predict(b: Belief, u: Control, W: np.ndarray) -> Belief:
    F, V = motion_jacobians(b.mean, u)
    P = F @ b.covariance @ F.T + V @ np.asarray(W, dtype=float) @ V.T
    return Belief(motion_mean(b.mean, u), P)


def _range_bearing(ox, oy, oth, tx, ty):
    ex, ey = tx - ox, ty - oy
    q = ex * ex + ey * ey
    d = math.sqrt(q)
    if d <= SINGULAR_DISTANCE:
        raise SingularGeometry(f"observer at ({ox}, {oy}) coincides with target")
    phi = wrap_angle(math.atan2(ey, ex) - oth)
    H_obs = np.array([[-ex / d, -ey / d, 0.0],
                      [ey / q, -ex / q, -1.0]])
    H_tgt = np.array([[ex / d, ey / d, 0.0],
                      [-ey / q, ex / q, 0.0]])
    return d, phi, H_obs, H_tgt


def landmark_model(p: Pose, lm: Landmark) -> tuple[Measurement, np.ndarray]:
    d, phi, H, _ = _range_bearing(p.x, p.y, p.theta, lm.x, lm.y)
    return Measurement(d, phi, lm.id), H


def mutual_model(p_r: Pose, p_rp: Pose) -> tuple[Measurement, np.ndarray]:
    """Range and bearing of robot ``p_rp`` as seen from ``p_r``; 2x6 Jacobian.

    The bearing row w.r.t. the observed robot is (-dy/d^2, dx/d^2, 0).
    """
    d, phi, H_obs, H_tgt = _range_bearing(p_r.x, p_r.y, p_r.theta, p_rp.x, p_rp.y)
    return Measurement(d, phi, "mutual"), np.hstack([H_obs, H_tgt])


def innovation(z: Measurement, predicted: Measurement) -> np.ndarray:
    return np.array([z.range - predicted.range, wrap_angle(z.bearing - predicted.bearing)])


def _kalman(mu: np.ndarray, P: np.ndarray, H: np.ndarray, nu: np.ndarray, Q: np.ndarray):
    S = H @ P @ H.T + Q
    try:
        if np.linalg.cond(S) > 1e14:
            raise np.linalg.LinAlgError
        K = np.linalg.solve(S.T, (P @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularity(f"innovation covariance not invertible: {S.tolist()}") from exc
    mu = mu + K @ nu
    P = (np.eye(P.shape[0]) - K @ H) @ P
    return mu, _sym(P)


def ekf_update(b: Belief, z: Measurement, lm: Landmark, Q: np.ndarray) -> Belief:
    predicted, H = landmark_model(b.mean, lm)
    mu, P = _kalman(b.mean.as_array(), b.covariance, H, innovation(z, predicted),
                    np.asarray(Q, dtype=float))
    return Belief(Pose.from_array(mu), P)


def _per_robot_noise(W, n: int) -> list[np.ndarray]:
    W = np.asarray(W, dtype=float)
    if W.shape == (3, 3):
        return [W] * n
    if W.shape == (n, 3, 3):
        return list(W)
    if len(W) == n:
        return [np.asarray(w, dtype=float) for w in W]
    raise ValueError(f"process noise must be 3x3 or one 3x3 per robot, got shape {W.shape}")


def joint_predict(jb: JointBelief, controls: Sequence[Control], W) -> JointBelief:
    """Advance every robot; ``W`` is one 3x3 matrix or one per robot."""
    n = jb.n_robots
    if len(controls) != n:
        raise ValueError(f"expected {n} controls, got {len(controls)}")
    Ws = _per_robot_noise(W, n)
    Fs, Rs, means = [], [], []
    for p, u, Wi in zip(jb.means, controls, Ws):
        F, V = motion_jacobians(p, u)
        Fs.append(F)
        Rs.append(V @ Wi @ V.T)
        means.append(motion_mean(p, u))
    P = jb.covariance
    out = np.zeros_like(P)
    # blockwise so that exactly-zero cross blocks stay exactly zero
    for i in range(n):
        for j in range(n):
            blk = Fs[i] @ P[3 * i:3 * i + 3, 3 * j:3 * j + 3] @ Fs[j].T
            if i == j:
                blk = blk + Rs[i]
            out[3 * i:3 * i + 3, 3 * j:3 * j + 3] = blk
    return JointBelief(tuple(means), out)


def _joint_kalman(jb: JointBelief, H: np.ndarray, nu: np.ndarray, Q) -> JointBelief:
    mu, P = _kalman(jb.mean_vector(), jb.covariance, H, nu, np.asarray(Q, dtype=float))
    return JointBelief(tuple(Pose.from_array(mu[3 * i:3 * i + 3]) for i in range(jb.n_robots)), P)


def joint_update_landmark(jb: JointBelief, robot_index: int, z: Measurement,
                          lm: Landmark, Q) -> JointBelief:
    if not 0 <= robot_index < jb.n_robots:
        raise IndexError(f"robot index {robot_index} out of range")
    predicted, Hr = landmark_model(jb.means[robot_index], lm)
    H = np.zeros((2, 3 * jb.n_robots))
    H[:, 3 * robot_index:3 * robot_index + 3] = Hr
    return _joint_kalman(jb, H, innovation(z, predicted), Q)


def joint_update_mutual(jb: JointBelief, pair: tuple[int, int], z: Measurement, Q_mutual) -> JointBelief:
    """Fuse robot ``pair[0]``'s range-bearing reading of robot ``pair[1]``."""
    r, rp = pair
    if r == rp:
        raise ValueError("mutual observation needs two distinct robots")
    for i in pair:
        if not 0 <= i < jb.n_robots:
            raise IndexError(f"robot index {i} out of range")
    predicted, H2 = mutual_model(jb.means[r], jb.means[rp])
    H = np.zeros((2, 3 * jb.n_robots))
    H[:, 3 * r:3 * r + 3] = H2[:, :3]
    H[:, 3 * rp:3 * rp + 3] = H2[:, 3:]
    return _joint_kalman(jb, H, innovation(z, predicted), Q_mutual)


def simulate_noisy_observation(true_value: Measurement, Q, rng: np.random.Generator) -> Measurement:
    """Nominal reading plus an independent Gaussian draw per component."""
    sd = np.sqrt(np.diag(np.asarray(Q, dtype=float)))
    e = rng.standard_normal(2)
    return Measurement(max(true_value.range + sd[0] * e[0], 0.0),
                       true_value.bearing + sd[1] * e[1],
                       true_value.source)
