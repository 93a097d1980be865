"""Restarted GMRES with a Hessenberg-based condition estimate.

scipy's gmres does not expose the Arnoldi matrices, and the exceptional-point
and Dirichlet-eigenvalue guards need a conditioning estimate, so the iteration
is written out here.  Works for real or complex vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KrylovInfo:
    converged: bool
    iterations: int
    rel_residual: float
    condition_estimate: float


def gmres(apply, b, x0=None, tol=1e-10, restart=30, maxiter=500):
    """Solve ``apply(x) = b``.  Returns ``(x, KrylovInfo)``.

    The condition estimate is the largest ratio of extreme singular values of
    the Arnoldi Hessenberg matrices seen over all restart cycles.
    """
    b = np.asarray(b)
    dtype = np.result_type(b.dtype, np.float64)
    x = np.zeros(b.shape, dtype) if x0 is None else np.array(x0, dtype)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(b.shape, dtype), KrylovInfo(True, 0, 0.0, 1.0)
    total = 0
    cond = 1.0
    n = b.size
    while True:
        r = b - apply(x)
        beta = float(np.linalg.norm(r))
        if beta <= tol * bnorm or total >= maxiter:
            return x, KrylovInfo(beta <= tol * bnorm, total, beta / bnorm, cond)
        m = restart
        V = np.zeros((m + 1, n), dtype)
        H = np.zeros((m + 1, m), dtype)
        R = np.zeros((m + 1, m), dtype)
        cs = np.zeros(m, dtype)
        sn = np.zeros(m, dtype)
        g = np.zeros(m + 1, dtype)
        g[0] = beta
        V[0] = r.ravel() / beta
        j_end = 0
        for j in range(m):
            w = np.asarray(apply(V[j].reshape(b.shape))).ravel().astype(dtype, copy=True)
            total += 1
            for _ in range(2):  # classical Gram-Schmidt, twice
                c = V[: j + 1].conj() @ w
                H[: j + 1, j] += c
                w -= c @ V[: j + 1]
            hn = float(np.linalg.norm(w))
            H[j + 1, j] = hn
            if hn > 0:
                V[j + 1] = w / hn
            col = H[: j + 2, j].copy()
            for i in range(j):
                t = cs[i] * col[i] + sn[i] * col[i + 1]
                col[i + 1] = -np.conj(sn[i]) * col[i] + cs[i] * col[i + 1]
                col[i] = t
            a, bb = col[j], col[j + 1]
            d = np.hypot(abs(a), abs(bb))
            if d == 0:
                cs[j], sn[j] = 1.0, 0.0
            elif a == 0:
                cs[j], sn[j] = 0.0, 1.0
            else:
                cs[j] = abs(a) / d
                sn[j] = (a / abs(a)) * np.conj(bb) / d
            col[j] = cs[j] * a + sn[j] * bb
            col[j + 1] = 0.0
            R[: j + 2, j] = col
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            j_end = j + 1
            if abs(g[j + 1]) <= tol * bnorm or hn == 0 or total >= maxiter:
                break
        k = j_end
        y = _back_substitute(R[:k, :k], g[:k])
        x = x + (y @ V[:k]).reshape(b.shape)
        s = np.linalg.svd(H[: k + 1, :k], compute_uv=False)
        if s[-1] > 0:
            cond = max(cond, float(s[0] / s[-1]))
        else:
            cond = np.inf


def _back_substitute(R, g):
    k = R.shape[0]
    y = np.zeros(k, np.result_type(R, g))
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i] if R[i, i] != 0 else 0.0
    return y
