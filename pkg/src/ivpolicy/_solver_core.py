"""Hot loops of the dual hinge solver.

Two interchangeable backends with identical update rules: a numba-compiled
one (used when numba imports and IVPOLICY_NO_NUMBA is unset) and a plain
numpy one.  Both expose

* ``smo_block(K, diagK, y, caps, alpha, u, iters)`` -- run up to ``iters``
  pairwise dual-ascent updates in place; returns ``(done, kkt)`` where
  ``kkt`` is the working-set optimality gap at the early stop (0.0 when the
  up-set is empty, a large sentinel when the block ran its full length);
* ``intercept_scan(u, y, caps)`` -- exact minimizer over b of
  ``sum_k caps_k * hinge(y_k (u_k + b))``; returns ``(b, objective)``.

Selection is greedy first-order on i (most violating in the up-set) and
second-order on j (largest guaranteed decrease among the low-set).
"""

from __future__ import annotations

import os

import numpy as np

_SENTINEL = 1e300


def _smo_block_py(K, diagK, y, caps, alpha, u, iters):
    done = 0
    while done < iters:
        F = y - u
        pos = y > 0
        up = np.where(pos, alpha < caps, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < caps)
        if not up.any():
            return done, 0.0
        i = int(np.argmax(np.where(up, F, -np.inf)))
        Fi = F[i]
        if not low.any():
            return done, 0.0
        Mlow = float(np.min(np.where(low, F, np.inf)))
        cand = low & (F < Fi - 1e-15)
        if not cand.any():
            return done, Fi - Mlow
        Ki = K[i]
        quad = np.maximum(K[i, i] + diagK - 2.0 * Ki, 1e-12)
        score = np.where(cand, (Fi - F) ** 2 / quad, -np.inf)
        j = int(np.argmax(score))

        q = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        t = (Fi - F[j]) / q
        if y[i] > 0:
            lo_i, hi_i = -alpha[i], caps[i] - alpha[i]
        else:
            lo_i, hi_i = alpha[i] - caps[i], alpha[i]
        if y[j] > 0:
            lo_j, hi_j = alpha[j] - caps[j], alpha[j]
        else:
            lo_j, hi_j = -alpha[j], caps[j] - alpha[j]
        t = min(max(t, max(lo_i, lo_j)), min(hi_i, hi_j))
        if t <= 0.0:
            return done, Fi - Mlow
        alpha[i] = min(max(alpha[i] + y[i] * t, 0.0), caps[i])
        alpha[j] = min(max(alpha[j] - y[j] * t, 0.0), caps[j])
        u += t * (Ki - K[j])
        done += 1
    return done, _SENTINEL


def _intercept_scan_py(u, y, caps):
    candidates = y - u
    slack = (1.0 - y * u)[None, :] - np.outer(candidates, y)
    np.maximum(slack, 0.0, out=slack)
    totals = slack @ caps
    k = int(np.argmin(totals))
    return float(candidates[k]), float(totals[k])


def _build_numba():
    from numba import njit

    @njit(cache=True)
    def smo_block(K, diagK, y, caps, alpha, u, iters):  # pragma: no cover - jitted
        n = y.shape[0]
        done = 0
        while done < iters:
            Fi = -_SENTINEL
            i = -1
            for k in range(n):
                if (y[k] > 0 and alpha[k] < caps[k]) or (y[k] < 0 and alpha[k] > 0):
                    f = y[k] - u[k]
                    if f > Fi:
                        Fi = f
                        i = k
            if i < 0:
                return done, 0.0
            Mlow = _SENTINEL
            best = -1.0
            j = -1
            for k in range(n):
                if (y[k] > 0 and alpha[k] > 0) or (y[k] < 0 and alpha[k] < caps[k]):
                    f = y[k] - u[k]
                    if f < Mlow:
                        Mlow = f
                    d = Fi - f
                    if d > 1e-15:
                        q = K[i, i] + diagK[k] - 2.0 * K[i, k]
                        if q < 1e-12:
                            q = 1e-12
                        s = d * d / q
                        if s > best:
                            best = s
                            j = k
            if Mlow >= _SENTINEL:
                return done, 0.0
            if j < 0:
                return done, Fi - Mlow
            q = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if q < 1e-12:
                q = 1e-12
            t = (Fi - (y[j] - u[j])) / q
            if y[i] > 0:
                lo_i = -alpha[i]
                hi_i = caps[i] - alpha[i]
            else:
                lo_i = alpha[i] - caps[i]
                hi_i = alpha[i]
            if y[j] > 0:
                lo_j = alpha[j] - caps[j]
                hi_j = alpha[j]
            else:
                lo_j = -alpha[j]
                hi_j = caps[j] - alpha[j]
            lo = max(lo_i, lo_j)
            hi = min(hi_i, hi_j)
            if t > hi:
                t = hi
            if t < lo:
                t = lo
            if t <= 0.0:
                return done, Fi - Mlow
            ai = alpha[i] + y[i] * t
            if ai < 0.0:
                ai = 0.0
            if ai > caps[i]:
                ai = caps[i]
            aj = alpha[j] - y[j] * t
            if aj < 0.0:
                aj = 0.0
            if aj > caps[j]:
                aj = caps[j]
            alpha[i] = ai
            alpha[j] = aj
            for k in range(n):
                u[k] += t * (K[i, k] - K[j, k])
            done += 1
        return done, _SENTINEL

    @njit(cache=True)
    def intercept_scan(u, y, caps):  # pragma: no cover - jitted
        n = u.shape[0]
        best_obj = _SENTINEL
        best_b = 0.0
        for c in range(n):
            b = y[c] - u[c]
            total = 0.0
            for k in range(n):
                s = 1.0 - y[k] * (u[k] + b)
                if s > 0.0:
                    total += caps[k] * s
            if total < best_obj:
                best_obj = total
                best_b = b
        return best_b, best_obj

    return smo_block, intercept_scan


USING_NUMBA = False
if not os.environ.get("IVPOLICY_NO_NUMBA"):
    try:
        smo_block, intercept_scan = _build_numba()
        USING_NUMBA = True
    except ImportError:
        pass
if not USING_NUMBA:
    smo_block, intercept_scan = _smo_block_py, _intercept_scan_py
