"""Independent reference implementations the tests check against.

Everything here is written as plainly as possible (explicit Python loops, no
vectorization, no shared helpers with the package) so that agreement between
package and oracle is meaningful. The Hausdorff oracle accumulates squared
distances with the same expression shape the package uses, which is what makes
exact float equality a fair assertion.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def brute_dice(pred: np.ndarray, gold: np.ndarray) -> float:
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gold).astype(bool)
    inter = psum = gsum = 0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j]:
                psum += 1
            if g[i, j]:
                gsum += 1
            if p[i, j] and g[i, j]:
                inter += 1
    if psum + gsum == 0:
        return 1.0
    return 2.0 * inter / (psum + gsum)


def brute_boundary(mask: np.ndarray) -> list:
    m = np.asarray(mask).astype(bool)
    h, w = m.shape
    out = []
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            edge = False
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ni, nj = i + di, j + dj
                    if ni < 0 or nj < 0 or ni >= h or nj >= w or not m[ni, nj]:
                        edge = True
            if edge:
                out.append((i, j))
    return out


def brute_hausdorff(pred: np.ndarray, gold: np.ndarray, spacing=(1.0, 1.0)) -> float:
    dy, dx = float(spacing[0]), float(spacing[1])
    a = brute_boundary(pred)
    b = brute_boundary(gold)
    if not a or not b:
        raise ValueError("empty mask")

    def directed(src, dst):
        worst = 0.0
        for (i1, j1) in src:
            best = math.inf
            for (i2, j2) in dst:
                d2 = (dy * (i1 - i2)) ** 2 + (dx * (j1 - j2)) ** 2
                if d2 < best:
                    best = d2
            if best > worst:
                worst = best
        return worst

    return math.sqrt(max(directed(a, b), directed(b, a)))


def finite_difference_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a float64 array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(x))
        flat[k] = orig - eps
        fm = float(f(x))
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest guarded relative error; elements tiny on both sides are skipped."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    assert a.shape == b.shape
    worst = 0.0
    for av, bv in zip(a, b):
        if abs(av) < floor and abs(bv) < floor:
            continue
        worst = max(worst, abs(av - bv) / (max(abs(av), abs(bv)) + 1e-12))
    return worst


def autograd_gradient(f, x: np.ndarray) -> np.ndarray:
    """Torch double-precision gradient of a scalar function of one array."""
    t = torch.tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    out = f(t)
    out.backward()
    return t.grad.detach().numpy()
