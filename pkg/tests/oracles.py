"""Independent oracles used across the test suite.

These deliberately avoid the library's own code paths: finite differences
for gradients, per-row scans for nearest neighbors, direct summation for
losses, and a Jacobi sweep for eigenvalues.
"""

import math

import numpy as np


def central_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Max |a - r| / max(1, |r|); absolute near zero, relative away from it."""
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(r))
    return float(np.max(np.abs(a - r) / denom))


def brute_force_codes(states: np.ndarray, table: np.ndarray, n_slices: int) -> np.ndarray:
    """Per-token, per-slice exhaustive nearest-neighbor scan.

    states: [N, D]; table: [K, D]; returns [N, S] indices, smallest index
    winning ties, using true Euclidean distance row by row.
    """
    n, d = states.shape
    k = table.shape[0]
    w = d // n_slices
    out = np.zeros((n, n_slices), dtype=np.int64)
    for i in range(n):
        for s in range(n_slices):
            q = states[i, s * w : (s + 1) * w]
            best_j, best_d = 0, math.inf
            for j in range(k):
                dist = float(np.linalg.norm(q - table[j, s * w : (s + 1) * w]))
                if dist < best_d:
                    best_d, best_j = dist, j
            out[i, s] = best_j
    return out


def direct_smoothed_ce(logits: np.ndarray, targets, mask, smoothing: float) -> float:
    """Literal -sum q*log(softmax) per row, averaged over unmasked rows."""
    v = logits.shape[-1]
    flat = logits.reshape(-1, v)
    tg = np.asarray(targets).reshape(-1)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    total, count = 0.0, 0
    for i in range(flat.shape[0]):
        if not m[i]:
            continue
        p = np.exp(flat[i] - flat[i].max())
        p = p / p.sum()
        q = np.full(v, smoothing / v)
        q[tg[i]] += 1.0 - smoothing
        total += -(q * np.log(p)).sum()
        count += 1
    return total / count


def jacobi_eigvals(a: np.ndarray, sweeps: int = 100, tol: float = 1e-14) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by classical Jacobi rotations."""
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < tol:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]
