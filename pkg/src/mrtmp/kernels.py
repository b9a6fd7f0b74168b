"""Hot numeric loops: collision sampling and lockstep joint-EKF simulation.

Every function here compiles under ``numba.njit`` and also runs unchanged as
plain numpy when ``MRTMP_DISABLE_NUMBA=1``. Random draws are made by the
caller and passed in as standard-normal arrays, so both paths consume the
same numbers and agree to rounding.
"""
import math

import numpy as np

from ._accel import njit

TWO_PI = 2.0 * math.pi

# simulate_pair status codes
OK = 0
SINGULAR_INNOVATION = 1


@njit
def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    r = a - TWO_PI * math.floor((a + math.pi) / TWO_PI)
    if r <= -math.pi:
        r = math.pi
    return r


@njit
def point_free(x, y, bounds, obstacles):
    # boundary counts as collision, for both the map edge and obstacles
    if not (bounds[0] < x < bounds[2] and bounds[1] < y < bounds[3]):
        return False
    for i in range(obstacles.shape[0]):
        if (obstacles[i, 0] <= x <= obstacles[i, 2]
                and obstacles[i, 1] <= y <= obstacles[i, 3]):
            return False
    return True


@njit
def points_free(xs, ys, bounds, obstacles):
    out = np.empty(xs.shape[0], dtype=np.bool_)
    for i in range(xs.shape[0]):
        out[i] = point_free(xs[i], ys[i], bounds, obstacles)
    return out


@njit
def segment_free(ax, ay, bx, by, bounds, obstacles, spacing):
    # canonical endpoint order makes the sample set independent of direction
    if (bx < ax) or (bx == ax and by < ay):
        ax, ay, bx, by = bx, by, ax, ay
    length = math.hypot(bx - ax, by - ay)
    n = int(math.ceil(length / spacing))
    if n < 1:
        n = 1
    for i in range(n + 1):
        t = i / n
        x = ax + (bx - ax) * t
        y = ay + (by - ay) * t
        if not point_free(x, y, bounds, obstacles):
            return False
    return True


@njit
def segments_free(a, b, bounds, obstacles, spacing):
    """Batch ``segment_free`` over rows of ``a`` and ``b`` (shape (n, 2))."""
    out = np.empty(a.shape[0], dtype=np.bool_)
    for i in range(a.shape[0]):
        out[i] = segment_free(a[i, 0], a[i, 1], b[i, 0], b[i, 1],
                              bounds, obstacles, spacing)
    return out


@njit
def compose(x, y, th, dx, dy, dth):
    c = math.cos(th)
    s = math.sin(th)
    return x + dx * c - dy * s, y + dx * s + dy * c, wrap_angle(th + dth)


@njit
def motion_jacobians(th, dx, dy):
    """Jacobians of ``compose`` w.r.t. the pose (F) and the control (V)."""
    c = math.cos(th)
    s = math.sin(th)
    F = np.eye(3)
    F[0, 2] = -dx * s - dy * c
    F[1, 2] = dx * c - dy * s
    V = np.zeros((3, 3))
    V[0, 0] = c
    V[0, 1] = -s
    V[1, 0] = s
    V[1, 1] = c
    V[2, 2] = 1.0
    return F, V


@njit
def range_bearing(x, y, th, tx, ty):
    """Range, bearing and 2x3 Jacobians w.r.t. observer and target.

    ``Ho`` is w.r.t. observer (x, y, th); ``Ht`` w.r.t. target (tx, ty, .).
    """
    ex = tx - x
    ey = ty - y
    q = ex * ex + ey * ey
    d = math.sqrt(q)
    phi = wrap_angle(math.atan2(ey, ex) - th)
    Ho = np.zeros((2, 3))
    Ht = np.zeros((2, 3))
    if d > 0.0:
        Ho[0, 0] = -ex / d
        Ho[0, 1] = -ey / d
        Ho[1, 0] = ey / q
        Ho[1, 1] = -ex / q
        Ht[0, 0] = ex / d
        Ht[0, 1] = ey / d
        Ht[1, 0] = -ey / q
        Ht[1, 1] = ex / q
    Ho[1, 2] = -1.0
    return d, phi, Ho, Ht


@njit
def matmul_into(A, B, out):
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            acc = 0.0
            for k in range(A.shape[1]):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc


@njit
def kalman_update(mu, P, H, innov, Q):
    """In-place EKF update of ``mu``/``P`` with a 2-row measurement.

    Returns (ok, trace increase). Covariance is (I - KH)P followed by
    symmetrization; angle entries of ``mu`` are not wrapped here.
    """
    n = mu.shape[0]
    PHt = np.zeros((n, 2))
    for i in range(n):
        for a in range(2):
            acc = 0.0
            for j in range(n):
                acc += P[i, j] * H[a, j]
            PHt[i, a] = acc
    S = np.empty((2, 2))
    for a in range(2):
        for b in range(2):
            acc = Q[a, b]
            for i in range(n):
                acc += H[a, i] * PHt[i, b]
            S[a, b] = acc
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    scale = abs(S[0, 0] * S[1, 1]) + abs(S[0, 1] * S[1, 0])
    if not (abs(det) > 1e-300 and abs(det) > 1e-14 * scale):
        return False, 0.0
    i00 = S[1, 1] / det
    i01 = -S[0, 1] / det
    i10 = -S[1, 0] / det
    i11 = S[0, 0] / det
    K = np.empty((n, 2))
    for i in range(n):
        K[i, 0] = PHt[i, 0] * i00 + PHt[i, 1] * i10
        K[i, 1] = PHt[i, 0] * i01 + PHt[i, 1] * i11
    IKH = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            IKH[i, j] = (1.0 if i == j else 0.0) - K[i, 0] * H[0, j] - K[i, 1] * H[1, j]
    Pn = np.empty((n, n))
    matmul_into(IKH, P, Pn)
    tr0 = 0.0
    tr1 = 0.0
    for i in range(n):
        mu[i] += K[i, 0] * innov[0] + K[i, 1] * innov[1]
        tr0 += P[i, i]
    for i in range(n):
        for j in range(i, n):
            v = 0.5 * (Pn[i, j] + Pn[j, i])
            P[i, j] = v
            P[j, i] = v
        tr1 += P[i, i]
    return True, tr1 - tr0


@njit
def propagate_cov(P, F, R):
    """Return symmetrized F P F^T + R."""
    n = P.shape[0]
    FP = np.empty((n, n))
    matmul_into(F, P, FP)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += FP[i, k] * F[j, k]
            out[i, j] = acc
    for i in range(n):
        for j in range(i, n):
            v = 0.5 * (out[i, j] + out[j, i]) + 0.5 * (R[i, j] + R[j, i])
            out[i, j] = v
            out[j, i] = v
    return out


@njit
def simulate_pair(mu0, P0, truth0, controls, n_controls, W, Q, Qm,
                  landmarks, sensor_range, mutual_range,
                  proc_noise, lm_noise, mut_noise):
    """Lockstep two-robot belief simulation.

    mu0, truth0 : (6,) joint mean / ground truth, robot 0 then robot 1
    P0 : (6, 6) joint covariance
    controls : (2, T, 3) nominal controls, robot i uses the first n_controls[i]
    W : (3,) process variances; Q, Qm : (2,) landmark / mutual variances
    landmarks : (L, 2)
    proc_noise : (T, 2, 3), lm_noise : (T, 2, L, 2), mut_noise : (T, 2)
        standard normal draws

    Each tick: predict every active robot, move the ground truth with
    sampled control noise, fuse one noisy range-bearing reading per landmark
    within sensor_range of each robot's true pose, then fuse robot 0's
    reading of robot 1 if their true distance is within mutual_range
    (mutual_range <= 0 disables it).
    """
    T = controls.shape[1]
    L = landmarks.shape[0]
    means = np.empty((T + 1, 6))
    covs = np.empty((T + 1, 6, 6))
    truths = np.empty((T + 1, 6))
    mu = mu0.copy()
    P = P0.copy()
    tr = truth0.copy()
    means[0] = mu
    covs[0] = P
    truths[0] = tr
    sW = np.sqrt(W)
    sQ = np.sqrt(Q)
    sQm = np.sqrt(Qm)
    Qd = np.diag(Q)
    Qmd = np.diag(Qm)
    c_u = 0.0
    n_updates = 0
    max_inc = -np.inf
    for t in range(T):
        F = np.eye(6)
        R = np.zeros((6, 6))
        for r in range(2):
            if t >= n_controls[r]:
                continue
            o = 3 * r
            dx = controls[r, t, 0]
            dy = controls[r, t, 1]
            dth = controls[r, t, 2]
            c_u += math.hypot(dx, dy)
            Fr, Vr = motion_jacobians(mu[o + 2], dx, dy)
            for i in range(3):
                for j in range(3):
                    F[o + i, o + j] = Fr[i, j]
                    acc = 0.0
                    for m in range(3):
                        acc += Vr[i, m] * W[m] * Vr[j, m]
                    R[o + i, o + j] = acc
            mu[o], mu[o + 1], mu[o + 2] = compose(mu[o], mu[o + 1], mu[o + 2], dx, dy, dth)
            wx = dx + sW[0] * proc_noise[t, r, 0]
            wy = dy + sW[1] * proc_noise[t, r, 1]
            wt = dth + sW[2] * proc_noise[t, r, 2]
            tr[o], tr[o + 1], tr[o + 2] = compose(tr[o], tr[o + 1], tr[o + 2], wx, wy, wt)
        P = propagate_cov(P, F, R)

        for r in range(2):
            o = 3 * r
            for k in range(L):
                lx = landmarks[k, 0]
                ly = landmarks[k, 1]
                if math.hypot(lx - tr[o], ly - tr[o + 1]) > sensor_range:
                    continue
                d_true, b_true, _, _ = range_bearing(tr[o], tr[o + 1], tr[o + 2], lx, ly)
                if d_true > sensor_range or d_true <= 1e-9:
                    continue
                z0 = max(d_true + sQ[0] * lm_noise[t, r, k, 0], 0.0)
                z1 = wrap_angle(b_true + sQ[1] * lm_noise[t, r, k, 1])
                d_hat, b_hat, Ho, _ = range_bearing(mu[o], mu[o + 1], mu[o + 2], lx, ly)
                if d_hat <= 1e-9:
                    continue
                H = np.zeros((2, 6))
                for a in range(2):
                    for j in range(3):
                        H[a, o + j] = Ho[a, j]
                innov = np.empty(2)
                innov[0] = z0 - d_hat
                innov[1] = wrap_angle(z1 - b_hat)
                ok, inc = kalman_update(mu, P, H, innov, Qd)
                if not ok:
                    return means, covs, truths, c_u, n_updates, max_inc, SINGULAR_INNOVATION, t
                mu[o + 2] = wrap_angle(mu[o + 2])
                n_updates += 1
                if inc > max_inc:
                    max_inc = inc

        if mutual_range > 0.0:
            d_true, b_true, _, _ = range_bearing(tr[0], tr[1], tr[2], tr[3], tr[4])
            if 1e-9 < d_true <= mutual_range:
                z0 = max(d_true + sQm[0] * mut_noise[t, 0], 0.0)
                z1 = wrap_angle(b_true + sQm[1] * mut_noise[t, 1])
                d_hat, b_hat, Ho, Ht = range_bearing(mu[0], mu[1], mu[2], mu[3], mu[4])
                if d_hat > 1e-9:
                    H = np.zeros((2, 6))
                    for a in range(2):
                        for j in range(3):
                            H[a, j] = Ho[a, j]
                            H[a, 3 + j] = Ht[a, j]
                    innov = np.empty(2)
                    innov[0] = z0 - d_hat
                    innov[1] = wrap_angle(z1 - b_hat)
                    ok, inc = kalman_update(mu, P, H, innov, Qmd)
                    if not ok:
                        return means, covs, truths, c_u, n_updates, max_inc, SINGULAR_INNOVATION, t
                    mu[2] = wrap_angle(mu[2])
                    mu[5] = wrap_angle(mu[5])
                    n_updates += 1
                    if inc > max_inc:
                        max_inc = inc

        means[t + 1] = mu
        covs[t + 1] = P
        truths[t + 1] = tr
    return means, covs, truths, c_u, n_updates, max_inc, OK, T


def warm_up():
    """Compile (or load from cache) the simulation kernels ahead of timing runs."""
    simulate_pair(np.zeros(6), np.eye(6), np.zeros(6), np.zeros((2, 1, 3)), np.array([1, 1]),
                  np.ones(3), np.ones(2), np.ones(2), np.ones((1, 2)), 1.0, 1.0,
                  np.zeros((1, 2, 3)), np.zeros((1, 2, 1, 2)), np.zeros((1, 2)))
    segments_free(np.zeros((1, 2)), np.ones((1, 2)), np.array([-1.0, -1.0, 2.0, 2.0]),
                  np.zeros((0, 4)), 0.1)
    wrap_angle(4.0)
    point_free(0.5, 0.5, np.array([-1.0, -1.0, 2.0, 2.0]), np.zeros((0, 4)))
