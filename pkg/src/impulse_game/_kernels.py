"""Path loops for the controlled Brownian motion.

Each path owns a numpy Generator and draws its Gaussian increments in chunks of
``CHUNK`` coarse steps (normals first, then bridge uniforms). Both backends use
the identical layout, so a path's draws do not depend on the backend.

Every path is run for ``K`` configurations at once, sharing the increments
(common random numbers). A configuration is either coarse (one step of size dt
per coarse step, increment = sum of the sub-increments) or fine (``substeps``
steps of size dt/substeps).
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import maybe_njit

CHUNK = 4096
N_OUT = 7
J1, J2, N1, N2, MAXABS, OVERSHOOT, T_FIRST = range(N_OUT)


@maybe_njit
def horner(coeffs, x):
    acc = 0.0
    for i in range(coeffs.shape[0] - 1, -1, -1):
        acc = acc * x + coeffs[i]
    return acc


@maybe_njit
def _intervene(k, x, t, disc, thr1, tgt1, thr2, tgt2, c, ct, lam, lt, u, p_cross1, p_cross2, out):
    """Apply at most one impulse to configuration k at time t; returns the new state."""
    if x <= thr1[k] or (p_cross1 > 0.0 and u < p_cross1):
        d = tgt1[k] - x
        out[k, J1] -= disc * (c + lam * abs(d))
        out[k, J2] += disc * (ct + lt * abs(d))
        out[k, N1] += 1.0
        if thr1[k] - x > out[k, OVERSHOOT]:
            out[k, OVERSHOOT] = thr1[k] - x
        if t < out[k, T_FIRST]:
            out[k, T_FIRST] = t
        return tgt1[k]
    if x >= thr2[k] or (p_cross2 > 0.0 and 1.0 - u < p_cross2):
        d = tgt2[k] - x
        out[k, J2] -= disc * (c + lam * abs(d))
        out[k, J1] += disc * (ct + lt * abs(d))
        out[k, N2] += 1.0
        if x - thr2[k] > out[k, OVERSHOOT]:
            out[k, OVERSHOOT] = x - thr2[k]
        if t < out[k, T_FIRST]:
            out[k, T_FIRST] = t
        return tgt2[k]
    return x


@maybe_njit
def _cross_prob(a, x, y, var):
    # probability that a Brownian bridge from x to y touches a, given both on one side
    return math.exp(-2.0 * (a - x) * (a - y) / var)


@maybe_njit
def path_kernel(
    rng, x0, thr1, tgt1, thr2, tgt2, fine, dt, n_steps, substeps,
    sigma, rho, f1, f2, c, ct, lam, lt, bridge, out,
):
    """Simulate one path for all K configurations; accumulates into out[K, N_OUT]."""
    K = x0.shape[0]
    h = dt / substeps
    sq = sigma * math.sqrt(h)
    var_c = sigma * sigma * dt
    var_f = sigma * sigma * h
    x = x0.copy()
    for k in range(K):
        out[k, :] = 0.0
        out[k, T_FIRST] = np.inf
        out[k, MAXABS] = abs(x[k])
        x[k] = _intervene(k, x[k], 0.0, 1.0, thr1, tgt1, thr2, tgt2, c, ct, lam, lt, 0.5, 0.0, 0.0, out)

    # discounts: exact exp at each chunk start, then a fixed-ratio recurrence
    q_dt = math.exp(-rho * dt)
    qpow = np.empty(substeps + 1)
    for s in range(substeps + 1):
        qpow[s] = math.exp(-rho * h * s)
    dsub = np.empty(substeps + 1)

    done = 0
    while done < n_steps:
        m = min(CHUNK, n_steps - done)
        z = rng.standard_normal(m * substeps)
        if bridge:
            u = rng.random(m * substeps)
        else:
            u = np.full(m * substeps, 0.5)
        d0 = math.exp(-rho * (done * dt))
        for i in range(m):
            t0 = (done + i) * dt
            base = i * substeps
            dw = 0.0
            for s in range(substeps):
                dw += z[base + s]
            dw *= sq
            d1 = d0 * q_dt
            for s in range(substeps + 1):
                dsub[s] = d0 * qpow[s]
            for k in range(K):
                if fine[k]:
                    xk = x[k]
                    for s in range(substeps):
                        out[k, J1] += dsub[s] * horner(f1, xk) * h
                        out[k, J2] += dsub[s] * horner(f2, xk) * h
                        xn = xk + sq * z[base + s]
                        if abs(xn) > out[k, MAXABS]:
                            out[k, MAXABS] = abs(xn)
                        p1 = 0.0
                        p2 = 0.0
                        if bridge:
                            if xn > thr1[k] and xk > thr1[k]:
                                p1 = _cross_prob(thr1[k], xk, xn, var_f)
                            if xn < thr2[k] and xk < thr2[k]:
                                p2 = _cross_prob(thr2[k], xk, xn, var_f)
                        xk = xn
                        if xn <= thr1[k] or xn >= thr2[k] or p1 > 0.0 or p2 > 0.0:
                            xk = _intervene(
                                k, xn, t0 + (s + 1) * h, dsub[s + 1], thr1, tgt1, thr2, tgt2,
                                c, ct, lam, lt, u[base + s], p1, p2, out,
                            )
                    x[k] = xk
                else:
                    xk = x[k]
                    out[k, J1] += d0 * horner(f1, xk) * dt
                    out[k, J2] += d0 * horner(f2, xk) * dt
                    xn = xk + dw
                    if abs(xn) > out[k, MAXABS]:
                        out[k, MAXABS] = abs(xn)
                    p1 = 0.0
                    p2 = 0.0
                    if bridge:
                        if xn > thr1[k] and xk > thr1[k]:
                            p1 = _cross_prob(thr1[k], xk, xn, var_c)
                        if xn < thr2[k] and xk < thr2[k]:
                            p2 = _cross_prob(thr2[k], xk, xn, var_c)
                    if xn <= thr1[k] or xn >= thr2[k] or p1 > 0.0 or p2 > 0.0:
                        xn = _intervene(
                            k, xn, t0 + dt, d1, thr1, tgt1, thr2, tgt2,
                            c, ct, lam, lt, u[base], p1, p2, out,
                        )
                    x[k] = xn
            d0 = d1
        done += m


def run_paths_loop(kernel, gens, cfg_arrays, scalars, out):
    """Call ``kernel`` path by path; out has shape (n_paths, K, N_OUT)."""
    for i, rng in enumerate(gens):
        kernel(rng, *cfg_arrays, *scalars, out[i])


class _Group:
    """State of a set of configurations advanced with one step size (numpy backend)."""

    def __init__(self, cols, B, x0, thr1, tgt1, thr2, tgt2):
        self.cols = cols
        self.thr1, self.tgt1 = thr1[cols], tgt1[cols]
        self.thr2, self.tgt2 = thr2[cols], tgt2[cols]
        self.X = np.broadcast_to(x0[cols], (B, len(cols))).copy()
        self.res = np.zeros((B, len(cols), N_OUT))
        self.res[:, :, T_FIRST] = np.inf
        self.res[:, :, MAXABS] = np.abs(self.X)

    def running(self, disc, f1, f2, h):
        self.res[:, :, J1] += disc * np.polynomial.polynomial.polyval(self.X, f1) * h
        self.res[:, :, J2] += disc * np.polynomial.polynomial.polyval(self.X, f2) * h

    def move(self, dw, t, disc, u, var, bridge, c, ct, lam, lt):
        xk = self.X
        xn = xk + dw
        r = self.res
        np.maximum(r[:, :, MAXABS], np.abs(xn), out=r[:, :, MAXABS])
        if bridge:
            with np.errstate(over="ignore"):
                p1 = np.where((xn > self.thr1) & (xk > self.thr1), np.exp(-2.0 * (self.thr1 - xk) * (self.thr1 - xn) / var), 0.0)
                p2 = np.where((xn < self.thr2) & (xk < self.thr2), np.exp(-2.0 * (self.thr2 - xk) * (self.thr2 - xn) / var), 0.0)
        else:
            p1 = p2 = 0.0
        self.X = self.intervene(xn, t, disc, u, p1, p2, c, ct, lam, lt)

    def intervene(self, xn, t, disc, u, p1, p2, c, ct, lam, lt):
        r = self.res
        a1 = (xn <= self.thr1) | ((p1 > 0.0) & (u < p1))
        a2 = ~a1 & ((xn >= self.thr2) | ((p2 > 0.0) & (1.0 - u < p2)))
        if not (a1.any() or a2.any()):
            return xn
        d1 = np.abs(self.tgt1 - xn)
        d2 = np.abs(self.tgt2 - xn)
        r[:, :, J1] -= np.where(a1, disc * (c + lam * d1), 0.0)
        r[:, :, J2] += np.where(a1, disc * (ct + lt * d1), 0.0)
        r[:, :, J2] -= np.where(a2, disc * (c + lam * d2), 0.0)
        r[:, :, J1] += np.where(a2, disc * (ct + lt * d2), 0.0)
        r[:, :, N1] += a1
        r[:, :, N2] += a2
        over = np.where(a1, self.thr1 - xn, np.where(a2, xn - self.thr2, 0.0))
        np.maximum(r[:, :, OVERSHOOT], over, out=r[:, :, OVERSHOOT])
        act = a1 | a2
        r[:, :, T_FIRST] = np.where(act & (t < r[:, :, T_FIRST]), t, r[:, :, T_FIRST])
        return np.where(a1, self.tgt1, np.where(a2, self.tgt2, xn))


def run_paths_numpy(gens, x0, thr1, tgt1, thr2, tgt2, fine, dt, n_steps, substeps,
                    sigma, rho, f1, f2, c, ct, lam, lt, bridge, out, block: int = 1024):
    """Vectorized over paths and configurations; same draws as ``path_kernel``."""
    h = dt / substeps
    sq = sigma * math.sqrt(h)
    var_c, var_f = sigma * sigma * dt, sigma * sigma * h
    fine = np.asarray(fine, dtype=bool)
    cols_c, cols_f = np.flatnonzero(~fine), np.flatnonzero(fine)
    costs = (c, ct, lam, lt)

    for b0 in range(0, len(gens), block):
        g = gens[b0 : b0 + block]
        B = len(g)
        groups = [_Group(cols, B, x0, thr1, tgt1, thr2, tgt2) for cols in (cols_c, cols_f) if len(cols)]
        for grp in groups:
            grp.X = grp.intervene(grp.X, 0.0, 1.0, 0.5, 0.0, 0.0, *costs)
        coarse = groups[0] if len(cols_c) else None
        fine_g = groups[-1] if len(cols_f) else None

        q_dt = math.exp(-rho * dt)
        qpow = np.array([math.exp(-rho * h * s) for s in range(substeps + 1)])
        done = 0
        while done < n_steps:
            m = min(CHUNK, n_steps - done)
            Z = np.stack([r.standard_normal(m * substeps) for r in g])
            U = np.stack([r.random(m * substeps) for r in g]) if bridge else None
            d0 = math.exp(-rho * (done * dt))
            for i in range(m):
                t0 = (done + i) * dt
                base = i * substeps
                d1 = d0 * q_dt
                dsub = d0 * qpow
                if coarse is not None:
                    dw = Z[:, base].copy()
                    for s in range(1, substeps):
                        dw += Z[:, base + s]
                    dw *= sq
                    coarse.running(d0, f1, f2, dt)
                    u = U[:, base][:, None] if bridge else 0.5
                    coarse.move(dw[:, None], t0 + dt, d1, u, var_c, bridge, *costs)
                if fine_g is not None:
                    for s in range(substeps):
                        fine_g.running(dsub[s], f1, f2, h)
                        u = U[:, base + s][:, None] if bridge else 0.5
                        fine_g.move(sq * Z[:, base + s][:, None], t0 + (s + 1) * h, dsub[s + 1], u, var_f, bridge, *costs)
                d0 = d1
            done += m
        for grp in groups:
            out[b0 : b0 + B, grp.cols] = grp.res
