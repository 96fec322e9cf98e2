"""Pure NumPy implementations of the hot kernels.

Operation order mirrors ``_kernels.pyx`` term by term so both back ends agree
to rounding.
"""

import numpy as np


def exit_scan(inside, deadline_steps, restart_at_tau):
    inside = np.asarray(inside, dtype=np.uint8)
    P, n, S = inside.shape
    out = np.full((P, n), -1, dtype=np.int64)
    dl = np.asarray(deadline_steps, dtype=np.int64)
    for p in range(P):
        start = 0
        for i in range(n):
            if start < 0 or start >= S:
                break
            row = inside[p, i, start:]
            hits = np.flatnonzero(row == 0)
            theta = start + int(hits[0]) if hits.size else -1
            out[p, i] = theta
            if restart_at_tau:
                if theta < 0:
                    nxt = dl[i]
                elif dl[i] >= 0:
                    nxt = min(theta, dl[i])
                else:
                    nxt = theta
                start = nxt
            else:
                start = theta
    return out


def _derivs(V, plus, minus, inv_h, ax):
    vp = V[plus[ax]]
    vm = V[minus[ax]]
    ih = inv_h[ax]
    dp = (vp - V) * ih
    dm = (V - vm) * ih
    d2 = (vp - 2.0 * V + vm) * (ih * ih)
    return dp, dm, d2


def hjb_step_affine(V, interior, dirichlet, plus, minus, inv_h, Bp, Bm, hA0, Cp, Cm, hAj, dt):
    d = plus.shape[0]
    m = Cp.shape[0]
    H = np.zeros_like(V)
    S = np.zeros((m,) + V.shape)
    for ax in range(d):
        dp, dm, d2 = _derivs(V, plus, minus, inv_h, ax)
        H = H + (Bp[ax] * dp + Bm[ax] * dm + hA0[ax] * d2)
        for j in range(m):
            S[j] = S[j] + (Cp[j, ax] * dp + Cm[j, ax] * dm + hAj[j, ax] * d2)
    for j in range(m):
        H = H + np.where(S[j] >= 0.0, S[j], 0.0)
    out = V + dt * H
    out = np.minimum(np.maximum(out, 0.0), 1.0)
    return np.where(interior.astype(bool), out, dirichlet)


def hjb_step_lattice(V, interior, dirichlet, plus, minus, inv_h, Fp, Fm, hA, dt):
    d = plus.shape[0]
    K = Fp.shape[0]
    best = np.full(V.shape, -np.inf)
    ders = [_derivs(V, plus, minus, inv_h, ax) for ax in range(d)]
    for c in range(K):
        h = np.zeros_like(V)
        for ax in range(d):
            dp, dm, d2 = ders[ax]
            h = h + (Fp[c, ax] * dp + Fm[c, ax] * dm + hA[c, ax] * d2)
        best = np.maximum(best, h)
    out = V + dt * best
    out = np.minimum(np.maximum(out, 0.0), 1.0)
    return np.where(interior.astype(bool), out, dirichlet)
