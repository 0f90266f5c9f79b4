"""Compiled inner loops for the neighbor energy terms.

Both the grid path and the all-pairs path go through these functions, and
each sum runs over bodies in pool order, so equal neighborhoods give
bit-identical energies. With ``select`` set, neighborhood membership is
decided per candidate from the distance thresholds; otherwise every pool
body counts. With ``prune`` set, bodies that provably stay out of range for
every candidate are skipped; skipping a non-member changes nothing, so
pruned and unpruned sums are identical.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EPS = 1e-9
RECT = 1
# slack on the skip test so rounding can never drop a real member
_SKIP_SLACK = 1e-6


@njit(cache=True)
def _support(code, a, b, hx, hy, dx, dy):
    if code != RECT:
        return a
    if hx * hx + hy * hy < EPS * EPS:
        hx = 1.0
        hy = 0.0
    return a * abs(dx * hx + dy * hy) + b * abs(dy * hx - dx * hy)


@njit(cache=True)
def _bound(code, a, b):
    if code != RECT:
        return a
    return math.sqrt(a * a + b * b)


@njit(cache=True)
def _clear(px, py, code, a, b, hx, hy, vx, vy, qx, qy, qvx, qvy, qcode, qa, qb, qhx, qhy, t):
    rx = (px + vx * t) - (qx + qvx * t)
    ry = (py + vy * t) - (qy + qvy * t)
    dist = math.sqrt(rx * rx + ry * ry)
    if dist < EPS:
        ux = 0.0
        uy = 0.0
    else:
        ux = rx / dist
        uy = ry / dist
    return dist - _support(code, a, b, hx, hy, -ux, -uy) - _support(qcode, qa, qb, qhx, qhy, ux, uy)


@njit(cache=True)
def clearance_matrix(px, py, code, a, b, hx, hy, V, Q, QV, QC, QA, QB, QH, t):
    k = Q.shape[0]
    m = V.shape[0]
    out = np.empty((k, m))
    for q in range(k):
        for j in range(m):
            out[q, j] = _clear(px, py, code, a, b, hx, hy, V[j, 0], V[j, 1],
                               Q[q, 0], Q[q, 1], QV[q, 0], QV[q, 1], QC[q], QA[q], QB[q], QH[q, 0], QH[q, 1], t)
    return out


@njit(cache=True)
def _reachable(px, py, code, a, b, V, Q, QV, QC, QA, QB, t, limit, prune):
    """Bodies whose clearance could drop to ``limit`` or below for some candidate."""
    keep = np.ones(Q.shape[0], dtype=np.bool_)
    if not prune:
        return keep
    vmax = 0.0
    for j in range(V.shape[0]):
        s = math.sqrt(V[j, 0] * V[j, 0] + V[j, 1] * V[j, 1])
        if s > vmax:
            vmax = s
    r_self = _bound(code, a, b)
    for q in range(Q.shape[0]):
        dx = px - Q[q, 0]
        dy = py - Q[q, 1]
        qs = math.sqrt(QV[q, 0] * QV[q, 0] + QV[q, 1] * QV[q, 1])
        low = math.sqrt(dx * dx + dy * dy) - (vmax + qs) * t - r_self - _bound(QC[q], QA[q], QB[q])
        keep[q] = low <= limit + _SKIP_SLACK
    return keep


@njit(cache=True)
def collision_mean(px, py, code, a, b, hx, hy, V, Q, QV, QC, QA, QB, QH, t, d_c, prune, select):
    """Mean of exp(d_c - d) over bodies with d < d_c, per candidate (0 if none)."""
    m = V.shape[0]
    out = np.zeros(m)
    keep = _reachable(px, py, code, a, b, V, Q, QV, QC, QA, QB, t, d_c, prune and select)
    for j in range(m):
        total = 0.0
        count = 0
        for q in range(Q.shape[0]):
            if not keep[q]:
                continue
            d = _clear(px, py, code, a, b, hx, hy, V[j, 0], V[j, 1],
                       Q[q, 0], Q[q, 1], QV[q, 0], QV[q, 1], QC[q], QA[q], QB[q], QH[q, 0], QH[q, 1], t)
            if d < d_c or not select:
                total += math.exp(d_c - d)
                count += 1
        if count > 0:
            out[j] = total / count
    return out


@njit(cache=True)
def attraction_mean(px, py, code, a, b, hx, hy, V, Q, QV, QC, QA, QB, QH, t, d_a, d_a_max, prune, select):
    """Mean of d^2 over bodies with d_a < d <= d_a_max, per candidate (0 if none)."""
    m = V.shape[0]
    out = np.zeros(m)
    keep = _reachable(px, py, code, a, b, V, Q, QV, QC, QA, QB, t, d_a_max, prune and select)
    for j in range(m):
        total = 0.0
        count = 0
        for q in range(Q.shape[0]):
            if not keep[q]:
                continue
            d = _clear(px, py, code, a, b, hx, hy, V[j, 0], V[j, 1],
                       Q[q, 0], Q[q, 1], QV[q, 0], QV[q, 1], QC[q], QA[q], QB[q], QH[q, 0], QH[q, 1], t)
            if (d > d_a and d <= d_a_max) or not select:
                total += d * d
                count += 1
        if count > 0:
            out[j] = total / count
    return out


@njit(cache=True)
def _unit(x, y):
    n = math.sqrt(x * x + y * y)
    if n < EPS:
        return 0.0, 0.0
    return x / n, y / n


@njit(cache=True)
def adapt(V, C, cx, cy):
    """Direction adaptation of every dataset velocity to control ``(cx, cy)``."""
    m = V.shape[0]
    out = np.empty((m, 2))
    ctrl_zero = math.sqrt(cx * cx + cy * cy) < EPS
    for j in range(m):
        vx = V[j, 0]
        vy = V[j, 1]
        speed = math.sqrt(vx * vx + vy * vy)
        if math.sqrt(C[j, 0] * C[j, 0] + C[j, 1] * C[j, 1]) < EPS:
            if ctrl_zero:
                out[j, 0] = vx
                out[j, 1] = vy
            else:
                out[j, 0] = speed * cx
                out[j, 1] = speed * cy
            continue
        ux, uy = _unit(vx, vy)
        out[j, 0] = speed * (cx + (ux - C[j, 0]))
        out[j, 1] = speed * (cy + (uy - C[j, 1]))
    return out


@njit(cache=True)
def total_energy(px, py, code, a, b, hx, hy, V, prev_x, prev_y, cx, cy, w, target,
                 dt, T, d_c, d_a, d_a_max,
                 CQ, CQV, CQC, CQA, CQB, CQH,
                 AQ, AQV, AQC, AQA, AQB, AQH, prune, select):
    """Weighted energy of every candidate, terms added in a fixed order.

    ``w`` is ``[w_m, w_c, w_a, w_d, w_s, w_m1, w_m2, w_c1, w_c2, w_sg, w_cons]``;
    zero-weight terms and empty pools are skipped.
    """
    m = V.shape[0]
    total = np.zeros(m)
    w_m, w_c, w_a, w_d, w_s = w[0], w[1], w[2], w[3], w[4]
    w_m1, w_m2, w_c1, w_c2, w_sg, w_cons = w[5], w[6], w[7], w[8], w[9], w[10]
    if w_m > 0 and (w_m1 > 0 or w_m2 > 0):
        pux, puy = _unit(prev_x, prev_y)
        prev_speed = math.sqrt(prev_x * prev_x + prev_y * prev_y)
        for j in range(m):
            vux, vuy = _unit(V[j, 0], V[j, 1])
            dx = pux - vux
            dy = puy - vuy
            e_dir = math.sqrt(dx * dx + dy * dy)
            e_len = abs(prev_speed - math.sqrt(V[j, 0] * V[j, 0] + V[j, 1] * V[j, 1]))
            total[j] = total[j] + w_m * (w_m1 * e_dir + w_m2 * e_len)
    if w_c > 0 and CQ.shape[0] > 0:
        inner = np.zeros(m)
        if w_c1 > 0:
            ins = collision_mean(px, py, code, a, b, hx, hy, V, CQ, CQV, CQC, CQA, CQB, CQH,
                                 dt, d_c, prune, select)
            for j in range(m):
                inner[j] = inner[j] + w_c1 * ins[j]
        if w_c2 > 0:
            anti = collision_mean(px, py, code, a, b, hx, hy, V, CQ, CQV, CQC, CQA, CQB, CQH,
                                  T * dt, d_c, prune, select)
            for j in range(m):
                inner[j] = inner[j] + w_c2 * anti[j]
        for j in range(m):
            total[j] = total[j] + w_c * inner[j]
    if w_a > 0 and AQ.shape[0] > 0:
        att = attraction_mean(px, py, code, a, b, hx, hy, V, AQ, AQV, AQC, AQA, AQB, AQH,
                              dt, d_a, d_a_max, prune, select)
        for j in range(m):
            total[j] = total[j] + w_a * att[j]
    if w_d > 0:
        for j in range(m):
            vux, vuy = _unit(V[j, 0], V[j, 1])
            dx = cx - vux
            dy = cy - vuy
            total[j] = total[j] + w_d * math.sqrt(dx * dx + dy * dy)
    if w_s > 0 and (w_sg > 0 or w_cons > 0):
        for j in range(m):
            inner_s = 0.0
            if w_sg > 0:
                inner_s = inner_s + w_sg * abs(math.sqrt(V[j, 0] * V[j, 0] + V[j, 1] * V[j, 1]) - target)
            if w_cons > 0:
                # perp(control) = (-cy, cx)
                inner_s = inner_s + w_cons * abs(V[j, 0] * -cy + V[j, 1] * cx)
            total[j] = total[j] + w_s * inner_s
    return total
