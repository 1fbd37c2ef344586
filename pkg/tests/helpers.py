"""Reference solvers used only by the tests."""
import numpy as np


def projected_gradient_box(H, b, lo, hi, tol=1e-12, max_iter=200_000):
    """Accelerated projected gradient with restart for ``min 1/2 u'Hu + b'u`` over ``lo <= u <= hi``.

    Stops when the projected-gradient fixed-point residual drops below ``tol``.
    """
    L = np.linalg.eigvalsh(H)[-1]
    u = np.clip(np.zeros_like(b), lo, hi)
    y = u.copy()
    t = 1.0
    for _ in range(max_iter):
        u_next = np.clip(y - (H @ y + b) / L, lo, hi)
        if np.max(np.abs(u_next - np.clip(u_next - (H @ u_next + b) / L, lo, hi))) <= tol:
            return u_next
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if (H @ y + b) @ (u_next - u) > 0.0:
            # momentum points uphill: restart
            y, t_next = u_next.copy(), 1.0
        else:
            y = u_next + ((t - 1.0) / t_next) * (u_next - u)
        u, t = u_next, t_next
    return u


def random_box_qp(rng, k=None):
    """Random strictly convex QP over a box expressed as ``G u <= 1``; returns ``(H, b, G, lo, hi)``."""
    k = k or int(rng.integers(1, 9))
    Qm, _ = np.linalg.qr(rng.standard_normal((k, k)))
    H = Qm @ np.diag(rng.uniform(0.5, 5.0, k)) @ Qm.T
    H = 0.5 * (H + H.T)
    b = 3.0 * rng.standard_normal(k)
    c = rng.uniform(0.1, 2.0, k)
    G = np.vstack([np.diag(1.0 / c), -np.diag(1.0 / c)])
    return H, b, G, -c, c


def power_iteration_norm(M, iters=2000, seed=0):
    v = np.random.default_rng(seed).standard_normal(M.shape[1])
    MtM = M.T @ M
    for _ in range(iters):
        v = MtM @ v
        v /= np.linalg.norm(v)
    return float(np.sqrt(v @ MtM @ v))


def streaming_stats(values):
    """Welford mean/variance plus running min/max."""
    n, mean, m2 = 0, 0.0, 0.0
    lo, hi = np.inf, -np.inf
    for x in values:
        n += 1
        d = x - mean
        mean += d / n
        m2 += d * (x - mean)
        lo, hi = min(lo, x), max(hi, x)
    return mean, m2 / n, lo, hi
