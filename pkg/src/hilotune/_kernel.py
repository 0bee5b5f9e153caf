"""Compiled inner loops for batch trial simulation.

The closed loop (walker pose -> path projection -> deadband -> impedance
torque -> admittance displacement) is strictly sequential in time, so it
is run as a scalar jitted loop. The arithmetic mirrors the reference
implementations in controller.py and plant.py operation for operation;
tests assert bitwise agreement between the two paths.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def phase_series(phase0: float, increment: float, n: int) -> np.ndarray:
    """Iteratively advanced gait phase, matching the per-step recurrence
    (accumulated rounding must equal the step-by-step path exactly)."""
    out = np.empty(n)
    p = phase0
    for t in range(n):
        p = (p + increment) % 1.0
        out[t] = p
    return out


@njit(cache=True)
def noise_series(prev0: float, prev1: float, alpha: float, scale: float, w: np.ndarray) -> np.ndarray:
    """AR(1) low-pass filtered noise, continuing from the carried filter
    state; matches the per-step recurrence bit for bit."""
    n = w.shape[0]
    out = np.empty((n, 2))
    for t in range(n):
        prev0 = alpha * prev0 + scale * w[t, 0]
        prev1 = alpha * prev1 + scale * w[t, 1]
        out[t, 0] = prev0
        out[t, 1] = prev1
    return out


@njit(cache=True)
def _project(qx, qy, px, py, dx, dy, len2, seg_len, cum_len, total_len):
    best_d2 = np.inf
    best_j = 0
    best_t = 0.0
    for j in range(px.shape[0]):
        rx = qx - px[j]
        ry = qy - py[j]
        t = (rx * dx[j] + ry * dy[j]) / len2[j]
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx = px[j] + t * dx[j]
        cy = py[j] + t * dy[j]
        d2 = (qx - cx) ** 2 + (qy - cy) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best_j = j
            best_t = t
    refx = px[best_j] + best_t * dx[best_j]
    refy = py[best_j] + best_t * dy[best_j]
    frac = ((cum_len[best_j] + best_t * seg_len[best_j]) / total_len) % 1.0
    return refx, refy, frac


@njit(cache=True)
def simulate_trial(
    base,  # (n, 2) intended pose = reference + deviation + noise
    px, py, dx, dy, len2, seg_len, cum_len, total_len,  # path segments
    K0, K1, B0, B1,
    r_db, h_adm, adm_beta, u_max, dt,
    disp0, disp1,  # admittance displacement carried in from the last trial
    u_prev0, u_prev1,
):
    """Run one trial; returns torques (n-1, 2), deadband errors (n, 2),
    the final admittance displacement and the final realized pose."""
    n = base.shape[0]
    u = np.empty((n - 1, 2))
    e = np.empty((n, 2))
    dq0_prev = 0.0
    dq1_prev = 0.0
    q0 = 0.0
    q1 = 0.0
    for t in range(n):
        # admittance responds to the previously commanded torque
        t0 = h_adm * u_prev0
        t1 = h_adm * u_prev1
        if adm_beta > 0.0:
            disp0 = adm_beta * disp0 + (1.0 - adm_beta) * t0
            disp1 = adm_beta * disp1 + (1.0 - adm_beta) * t1
        else:
            disp0 = t0
            disp1 = t1
        q0 = base[t, 0] + disp0
        q1 = base[t, 1] + disp1

        refx, refy, _ = _project(q0, q1, px, py, dx, dy, len2, seg_len, cum_len, total_len)

        raw0 = refx - q0
        raw1 = refy - q1
        if raw0 > r_db:
            dq0 = raw0 - r_db
        elif raw0 < -r_db:
            dq0 = raw0 + r_db
        else:
            dq0 = 0.0
        if raw1 > r_db:
            dq1 = raw1 - r_db
        elif raw1 < -r_db:
            dq1 = raw1 + r_db
        else:
            dq1 = 0.0
        e[t, 0] = dq0
        e[t, 1] = dq1

        if t == 0:
            rate0 = 0.0
            rate1 = 0.0
        else:
            rate0 = (dq0 - dq0_prev) / dt
            rate1 = (dq1 - dq1_prev) / dt

        if t < n - 1:
            u0 = K0 * dq0 + B0 * rate0
            u1 = K1 * dq1 + B1 * rate1
            if u0 > u_max:
                u0 = u_max
            elif u0 < -u_max:
                u0 = -u_max
            if u1 > u_max:
                u1 = u_max
            elif u1 < -u_max:
                u1 = -u_max
            u[t, 0] = u0
            u[t, 1] = u1
            u_prev0 = u0
            u_prev1 = u1

        dq0_prev = dq0
        dq1_prev = dq1

    return u, e, disp0, disp1, q0, q1
