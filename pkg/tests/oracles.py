"""Independent reference implementations used by the tests."""

import itertools
import math

import numpy as np

from egotrack.seqmodel import backward, forward, loss


def brute_force_assignment(cost):
    """All min-cost matchings of size ``min(n, m)`` by enumeration.

    Returns ``(best_total, optima)`` with each optimum a row-sorted pair list.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    best, found = math.inf, []
    if n <= m:
        candidates = ([(i, c) for i, c in enumerate(cols)] for cols in itertools.permutations(range(m), n))
    else:
        candidates = (sorted((r, j) for j, r in enumerate(rows)) for rows in itertools.permutations(range(n), m))
    for pairs in candidates:
        total = math.fsum(cost[i, j] for i, j in pairs)
        if total < best:
            best, found = total, [pairs]
        elif total == best:
            found.append(pairs)
    return best, found


# Dense textbook Kalman recursion over (u, v, s, r, du, dv, ds).
F = np.eye(7)
F[0, 4] = F[1, 5] = F[2, 6] = 1.0
H = np.eye(4, 7)
R = np.diag([1.0, 1.0, 10.0, 10.0])
Q = np.diag([1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4])
P0 = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])


def dense_predict(x, P):
    x = x.copy()
    if x[2] + x[6] <= 0:
        x[6] = 0.0
    return F @ x, F @ P @ F.T + Q


def dense_update(x, P, z):
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    x = x + K @ (z - H @ x)
    P = (np.eye(7) - K @ H) @ P
    return x, P


def box_measurement(x1, y1, x2, y2):
    w, h = x2 - x1, y2 - y1
    return np.array([x1 + w / 2, y1 + h / 2, w * h, w / h])


def max_gradient_error(model, x, lengths, labels, eps=1e-5):
    """Largest relative gap between ``backward`` and central differences."""
    _, cache = forward(model, x, lengths)
    analytic = backward(model, cache, labels)
    worst = 0.0
    for name, value in model.params.items():
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + eps
            up = loss(forward(model, x, lengths)[0], labels)
            value[idx] = orig - eps
            down = loss(forward(model, x, lengths)[0], labels)
            value[idx] = orig
            num = (up - down) / (2 * eps)
            a = analytic[name][idx]
            worst = max(worst, abs(num - a) / max(1e-10, abs(num), abs(a)))
    return worst
