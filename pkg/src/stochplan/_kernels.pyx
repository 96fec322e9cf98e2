# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def exit_scan(inside, deadline_steps, bint restart_at_tau):
    cdef const unsigned char[:, :, ::1] ins = np.ascontiguousarray(inside, dtype=np.uint8)
    cdef const long long[::1] dl = np.ascontiguousarray(deadline_steps, dtype=np.int64)
    cdef Py_ssize_t P = ins.shape[0], n = ins.shape[1], S = ins.shape[2]
    out_arr = np.full((P, n), -1, dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef Py_ssize_t p, i, j
    cdef long long start, theta, nxt
    with nogil:
        for p in range(P):
            start = 0
            for i in range(n):
                if start < 0 or start >= S:
                    break
                theta = -1
                for j in range(start, S):
                    if ins[p, i, j] == 0:
                        theta = j
                        break
                out[p, i] = theta
                if restart_at_tau:
                    if theta < 0:
                        nxt = dl[i]
                    elif dl[i] >= 0:
                        nxt = theta if theta < dl[i] else dl[i]
                    else:
                        nxt = theta
                    start = nxt
                else:
                    start = theta
    return out_arr


def hjb_step_affine(V_in, interior_in, dirichlet_in, plus_in, minus_in, inv_h_in,
                    Bp_in, Bm_in, hA0_in, Cp_in, Cm_in, hAj_in, double dt):
    cdef const double[::1] V = np.ascontiguousarray(V_in, dtype=np.float64)
    cdef const unsigned char[::1] interior = np.ascontiguousarray(interior_in, dtype=np.uint8)
    cdef const double[::1] dirichlet = np.ascontiguousarray(dirichlet_in, dtype=np.float64)
    cdef const long long[:, ::1] plus = np.ascontiguousarray(plus_in, dtype=np.int64)
    cdef const long long[:, ::1] minus = np.ascontiguousarray(minus_in, dtype=np.int64)
    cdef const double[::1] inv_h = np.ascontiguousarray(inv_h_in, dtype=np.float64)
    cdef const double[:, ::1] Bp = np.ascontiguousarray(Bp_in, dtype=np.float64)
    cdef const double[:, ::1] Bm = np.ascontiguousarray(Bm_in, dtype=np.float64)
    cdef const double[:, ::1] hA0 = np.ascontiguousarray(hA0_in, dtype=np.float64)
    cdef const double[:, :, ::1] Cp = np.ascontiguousarray(Cp_in, dtype=np.float64)
    cdef const double[:, :, ::1] Cm = np.ascontiguousarray(Cm_in, dtype=np.float64)
    cdef const double[:, :, ::1] hAj = np.ascontiguousarray(hAj_in, dtype=np.float64)
    cdef Py_ssize_t N = V.shape[0], d = plus.shape[0], m = Cp.shape[0]
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    S_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] S = S_arr
    cdef Py_ssize_t n, ax, j
    cdef double v, vp, vm, ih, dp, dm, d2, H, o
    with nogil:
        for n in range(N):
            if not interior[n]:
                out[n] = dirichlet[n]
                continue
            v = V[n]
            H = 0.0
            for j in range(m):
                S[j] = 0.0
            for ax in range(d):
                vp = V[plus[ax, n]]
                vm = V[minus[ax, n]]
                ih = inv_h[ax]
                dp = (vp - v) * ih
                dm = (v - vm) * ih
                d2 = (vp - 2.0 * v + vm) * (ih * ih)
                H = H + (Bp[ax, n] * dp + Bm[ax, n] * dm + hA0[ax, n] * d2)
                for j in range(m):
                    S[j] = S[j] + (Cp[j, ax, n] * dp + Cm[j, ax, n] * dm + hAj[j, ax, n] * d2)
            for j in range(m):
                if S[j] >= 0.0:
                    H = H + S[j]
                else:
                    H = H + 0.0
            o = v + dt * H
            if o < 0.0:
                o = 0.0
            if o > 1.0:
                o = 1.0
            out[n] = o
    return out_arr


def hjb_step_lattice(V_in, interior_in, dirichlet_in, plus_in, minus_in, inv_h_in,
                     Fp_in, Fm_in, hA_in, double dt):
    cdef const double[::1] V = np.ascontiguousarray(V_in, dtype=np.float64)
    cdef const unsigned char[::1] interior = np.ascontiguousarray(interior_in, dtype=np.uint8)
    cdef const double[::1] dirichlet = np.ascontiguousarray(dirichlet_in, dtype=np.float64)
    cdef const long long[:, ::1] plus = np.ascontiguousarray(plus_in, dtype=np.int64)
    cdef const long long[:, ::1] minus = np.ascontiguousarray(minus_in, dtype=np.int64)
    cdef const double[::1] inv_h = np.ascontiguousarray(inv_h_in, dtype=np.float64)
    cdef const double[:, :, ::1] Fp = np.ascontiguousarray(Fp_in, dtype=np.float64)
    cdef const double[:, :, ::1] Fm = np.ascontiguousarray(Fm_in, dtype=np.float64)
    cdef const double[:, :, ::1] hA = np.ascontiguousarray(hA_in, dtype=np.float64)
    cdef Py_ssize_t N = V.shape[0], d = plus.shape[0], K = Fp.shape[0]
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    # derivatives once per node, then controls in the outer loop so the
    # (control, axis, node) tables are read contiguously
    ders_arr = np.empty((3, d, N), dtype=np.float64)
    cdef double[:, :, ::1] D = ders_arr
    best_arr = np.full(N, -np.inf, dtype=np.float64)
    cdef double[::1] best = best_arr
    cdef Py_ssize_t n, ax, c
    cdef double v, vp, vm, ih, h, o
    with nogil:
        for ax in range(d):
            ih = inv_h[ax]
            for n in range(N):
                v = V[n]
                vp = V[plus[ax, n]]
                vm = V[minus[ax, n]]
                D[0, ax, n] = (vp - v) * ih
                D[1, ax, n] = (v - vm) * ih
                D[2, ax, n] = (vp - 2.0 * v + vm) * (ih * ih)
        for c in range(K):
            for n in range(N):
                if not interior[n]:
                    continue
                h = 0.0
                for ax in range(d):
                    h = h + (Fp[c, ax, n] * D[0, ax, n] + Fm[c, ax, n] * D[1, ax, n] + hA[c, ax, n] * D[2, ax, n])
                if h > best[n]:
                    best[n] = h
        for n in range(N):
            if not interior[n]:
                out[n] = dirichlet[n]
                continue
            o = V[n] + dt * best[n]
            if o < 0.0:
                o = 0.0
            if o > 1.0:
                o = 1.0
            out[n] = o
    return out_arr
