"""Reference implementations used only by the tests.

Written against plain formulas with no reuse of package internals.
"""
import itertools
import math
from collections import deque

import numpy as np


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((len(f0), len(x)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h)
    return J


def wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def step_pose(p, u):
    x, y, th = p
    dx, dy, dth = u
    return np.array([x + np.cos(th) * dx - np.sin(th) * dy,
                     y + np.sin(th) * dx + np.cos(th) * dy,
                     th + dth])


def rb(observer, target):
    """Range and (unwrapped-difference) bearing of a 2D target."""
    dx, dy = target[0] - observer[0], target[1] - observer[1]
    return np.array([math.hypot(dx, dy), math.atan2(dy, dx) - observer[2]])


def dense_predict(mu, P, controls, W):
    """Joint prediction with full 3n x 3n Jacobians."""
    n = len(mu) // 3
    F = np.eye(3 * n)
    G = np.zeros((3 * n, 3 * n))
    new = np.empty_like(mu)
    for r in range(n):
        s = slice(3 * r, 3 * r + 3)
        new[s] = step_pose(mu[s], controls[r])
        F[s, s] = central_diff(lambda p: step_pose(p, controls[r]), mu[s], 1e-7)
        G[s, s] = central_diff(lambda u: step_pose(mu[s], u), np.asarray(controls[r], float), 1e-7)
    Wb = np.kron(np.eye(n), W)
    return new, F @ P @ F.T + G @ Wb @ G.T


def dense_update(mu, P, h, z, Q):
    """One-shot EKF update; ``h`` maps the full state to a 2-vector measurement."""
    H = central_diff(h, mu, 1e-7)
    nu = np.asarray(z, float) - h(mu)
    nu[1] = wrap(nu[1])
    S = H @ P @ H.T + Q
    K = P @ H.T @ np.linalg.inv(S)
    Pn = (np.eye(len(mu)) - K @ H) @ P
    return mu + K @ nu, 0.5 * (Pn + Pn.T)


def dense_update_exact(mu, P, H, nu, Q):
    S = H @ P @ H.T + Q
    K = P @ H.T @ np.linalg.inv(S)
    Pn = (np.eye(len(mu)) - K @ H) @ P
    return mu + K @ nu, 0.5 * (Pn + Pn.T)


def point_in_any_rect(x, y, rects):
    return any(r[0] <= x <= r[2] and r[1] <= y <= r[3] for r in rects)


def dense_segment_free(a, b, bounds, rects, spacing=0.001):
    n = max(1, int(math.ceil(math.dist(a, b) / spacing)))
    for i in range(n + 1):
        t = i / n
        x = a[0] + t * (b[0] - a[0])
        y = a[1] + t * (b[1] - a[1])
        if not (bounds[0] < x < bounds[2] and bounds[1] < y < bounds[3]):
            return False
        if point_in_any_rect(x, y, rects):
            return False
    return True


def bfs_plan_length(init, goal, actions):
    start = frozenset(init)
    if goal <= start:
        return 0
    seen = {start}
    q = deque([(start, 0)])
    while q:
        s, d = q.popleft()
        for a in actions:
            if a.pre_pos <= s and not (a.pre_neg & s):
                ns = frozenset((s - a.delete) | a.add)
                if goal <= ns:
                    return d + 1
                if ns not in seen:
                    seen.add(ns)
                    q.append((ns, d + 1))
    return None


def enumerate_min_cost(init, goal, actions, cost_fn, context, max_len):
    """Cheapest goal-reaching sequence of at most ``max_len`` actions.

    ``cost_fn(action, state, ctx) -> (cost, next_ctx)``; every sequence is
    walked explicitly.
    """
    best = math.inf

    def rec(s, ctx, depth, acc):
        nonlocal best
        if goal <= s:
            best = min(best, acc)
        if depth == max_len:
            return
        for a in actions:
            if a.pre_pos <= s and not (a.pre_neg & s):
                c, nctx = cost_fn(a, s, ctx)
                if math.isinf(c) or acc + c >= best:
                    continue
                rec(frozenset((s - a.delete) | a.add), nctx, depth + 1, acc + c)

    rec(frozenset(init), context, 0, 0.0)
    return best


def union_find_components(n, edges):
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


def all_products(*sets):
    return list(itertools.product(*sets))


def step_jacobians(p, u):
    """Closed-form partials of ``step_pose`` w.r.t. pose and control."""
    th = p[2]
    c, s = np.cos(th), np.sin(th)
    F = np.array([[1, 0, -s * u[0] - c * u[1]], [0, 1, c * u[0] - s * u[1]], [0, 0, 1]], float)
    G = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], float)
    return F, G


def rb_jacobian(x, obs, tgt):
    """2 x len(x) Jacobian of range-bearing with observer pose at index
    ``obs`` and target point at index ``tgt`` (None for a fixed landmark)."""
    ox, oy = x[3 * obs], x[3 * obs + 1]
    tx, ty = (x[3 * tgt], x[3 * tgt + 1]) if isinstance(tgt, int) else tgt
    dx, dy = tx - ox, ty - oy
    r2 = dx * dx + dy * dy
    r = np.sqrt(r2)
    H = np.zeros((2, len(x)))
    H[0, 3 * obs:3 * obs + 2] = [-dx / r, -dy / r]
    H[1, 3 * obs:3 * obs + 3] = [dy / r2, -dx / r2, -1.0]
    if isinstance(tgt, int):
        H[0, 3 * tgt:3 * tgt + 2] = [dx / r, dy / r]
        H[1, 3 * tgt:3 * tgt + 2] = [-dy / r2, dx / r2]
    return H


def dense_joint_predict(mu, P, controls, W):
    n = len(mu) // 3
    F = np.zeros((3 * n, 3 * n))
    G = np.zeros((3 * n, 3 * n))
    new = np.empty_like(mu)
    for r in range(n):
        s = slice(3 * r, 3 * r + 3)
        new[s] = step_pose(mu[s], controls[r])
        F[s, s], G[s, s] = step_jacobians(mu[s], controls[r])
    new[2::3] = wrap(new[2::3])
    return new, F @ P @ F.T + G @ np.kron(np.eye(n), W) @ G.T


def dense_joint_update(mu, P, z, obs, tgt, Q):
    tpt = (mu[3 * tgt], mu[3 * tgt + 1]) if isinstance(tgt, int) else tgt
    h = rb(mu[3 * obs:3 * obs + 3], tpt)
    nu = np.asarray(z, float) - h
    nu[1] = wrap(nu[1])
    new, Pn = dense_update_exact(mu, P, rb_jacobian(mu, obs, tgt), nu, Q)
    new[2::3] = wrap(new[2::3])
    return new, Pn
