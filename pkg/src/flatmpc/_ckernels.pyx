# cython: language_level=3
"""Compiled hot kernels: SE-ARD kernel matrices and barrier Newton centering.

Semantics mirror ``flatmpc._pykernels`` exactly; only the arithmetic
order inside reductions differs, so results agree to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY

cnp.import_array()

CONVERGED = 0
STOPPED = 1
MAX_ITER = 2
STALLED = 3
UNBOUNDED = 4

cdef double _ARMIJO = 0.01
cdef double _FULL_STEP_DECREMENT = 0.25
cdef double _REL_DECREMENT = 1e-13
cdef double _UNBOUNDED_NORM = 1e15
cdef double _STALL_GAIN = 1e-14
cdef int _STALL_STEPS = 5


def se_ard(X1, X2, inv_ls2, double variance):
    cdef double[:, ::1] a = np.ascontiguousarray(X1, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(X2, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(inv_ls2, dtype=np.float64)
    cdef Py_ssize_t n1 = a.shape[0], n2 = b.shape[0], dim = a.shape[1]
    out = np.empty((n1, n2), dtype=np.float64)
    cdef double[:, ::1] K = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for k in range(dim):
                diff = a[i, k] - b[j, k]
                acc += diff * diff * w[k]
            K[i, j] = variance * exp(-0.5 * acc)
    return out


cdef double _barrier(double[::1] x, double[:, ::1] G, double[::1] h,
                     double[:, ::1] A, double[::1] b, double[:, ::1] C,
                     double[::1] d, long[::1] offs) noexcept nogil:
    cdef Py_ssize_t m = x.shape[0], j, k, i
    cdef double val = 0.0, sl, s, n, ri
    for j in range(G.shape[0]):
        sl = h[j]
        for k in range(m):
            sl -= G[j, k] * x[k]
        if sl <= 0.0:
            return INFINITY
        val -= log(sl)
    for i in range(C.shape[0]):
        s = d[i]
        for k in range(m):
            s += C[i, k] * x[k]
        n = 0.0
        for j in range(offs[i], offs[i + 1]):
            ri = b[j]
            for k in range(m):
                ri += A[j, k] * x[k]
            n += ri * ri
        n = sqrt(n)
        if s - n <= 0.0:
            return INFINITY
        val -= log(s - n) + log(s + n)
    return val


def barrier(x, G, h, A, b, C, d, offs):
    return _barrier(np.ascontiguousarray(x, dtype=np.float64), G, h, A, b, C, d,
                    np.ascontiguousarray(offs, dtype=np.int64))


cdef void _grad_hess(double[::1] x, double t, double[::1] f,
                     double[:, ::1] G, double[::1] h,
                     double[:, ::1] A, double[::1] b, double[:, ::1] C,
                     double[::1] d, long[::1] offs, double[:, :, ::1] AtA,
                     double[::1] grad, double[:, ::1] hess,
                     double[::1] r, double[::1] gv) noexcept nogil:
    cdef Py_ssize_t m = x.shape[0], j, k, l, i, row
    cdef double inv, s, n, D, coef
    for k in range(m):
        grad[k] = t * f[k]
        for l in range(m):
            hess[k, l] = 0.0
    for j in range(G.shape[0]):
        inv = h[j]
        for k in range(m):
            inv -= G[j, k] * x[k]
        inv = 1.0 / inv
        for k in range(m):
            grad[k] += G[j, k] * inv
            for l in range(m):
                hess[k, l] += G[j, k] * G[j, l] * inv * inv
    for i in range(C.shape[0]):
        s = d[i]
        for k in range(m):
            s += C[i, k] * x[k]
        n = 0.0
        for row in range(offs[i], offs[i + 1]):
            r[row - offs[i]] = b[row]
            for k in range(m):
                r[row - offs[i]] += A[row, k] * x[k]
            n += r[row - offs[i]] * r[row - offs[i]]
        n = sqrt(n)
        D = (s - n) * (s + n)
        for k in range(m):
            gv[k] = -2.0 * s * C[i, k]
            for row in range(offs[i], offs[i + 1]):
                gv[k] += 2.0 * A[row, k] * r[row - offs[i]]
            gv[k] /= D
            grad[k] += gv[k]
        coef = 2.0 / D
        for k in range(m):
            for l in range(m):
                hess[k, l] += coef * (AtA[i, k, l] - C[i, k] * C[i, l]) + gv[k] * gv[l]


cdef int _cholesky_solve(double[:, ::1] H, double[::1] rhs, double reg,
                         double[:, ::1] L, double[::1] out) noexcept nogil:
    """Solve (H + reg*I) out = rhs; returns 0 on success, -1 if not PD."""
    cdef Py_ssize_t m = H.shape[0], i, j, k
    cdef double acc
    for j in range(m):
        acc = H[j, j] + reg
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if acc <= 0.0:
            return -1
        L[j, j] = sqrt(acc)
        for i in range(j + 1, m):
            acc = H[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    for i in range(m):
        acc = rhs[i]
        for k in range(i):
            acc -= L[i, k] * out[k]
        out[i] = acc / L[i, i]
    for i in range(m - 1, -1, -1):
        acc = out[i]
        for k in range(i + 1, m):
            acc -= L[k, i] * out[k]
        out[i] = acc / L[i, i]
    return 0


def center(x0, double t, f, G, h, A, b, C, d, offs, AtA, double tol,
           int max_iter, int stop_idx, double stop_below):
    x_arr = np.array(x0, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef long[::1] ov = np.ascontiguousarray(offs, dtype=np.int64)
    cdef double[:, :, ::1] Mv = np.ascontiguousarray(AtA, dtype=np.float64)
    cdef Py_ssize_t m = x.shape[0], k, kmax = 1
    cdef Py_ssize_t i
    for i in range(Cv.shape[0]):
        if ov[i + 1] - ov[i] > kmax:
            kmax = ov[i + 1] - ov[i]
    cdef double[::1] grad = np.empty(m)
    cdef double[:, ::1] hess = np.empty((m, m))
    cdef double[:, ::1] L = np.empty((m, m))
    cdef double[::1] dx = np.empty(m)
    cdef double[::1] neg = np.empty(m)
    cdef double[::1] xn = np.empty(m)
    cdef double[::1] r = np.empty(kmax)
    cdef double[::1] gv = np.empty(m)
    cdef double phi, phin = 0.0, fx, lam2, lam, fdx, damped, step, scale, reg, nrm, gain
    cdef int it, attempt, ok, accepted, flat = 0

    phi = _barrier(x, Gv, hv, Av, bv, Cv, dv, ov)
    for it in range(max_iter):
        _grad_hess(x, t, fv, Gv, hv, Av, bv, Cv, dv, ov, Mv, grad, hess, r, gv)
        scale = 1e-300
        for k in range(m):
            neg[k] = -grad[k]
            if fabs(hess[k, k]) > scale:
                scale = fabs(hess[k, k])
        reg = 0.0
        ok = -1
        for attempt in range(8):
            ok = _cholesky_solve(hess, neg, reg, L, dx)
            if ok == 0:
                break
            reg = 1e-14 * scale if reg == 0.0 else reg * 100.0
        if ok != 0:
            return x_arr, it, STALLED
        lam2 = 0.0
        fdx = 0.0
        fx = 0.0
        for k in range(m):
            lam2 -= grad[k] * dx[k]
            fdx += fv[k] * dx[k]
            fx += fv[k] * x[k]
        if lam2 * 0.5 <= tol + _REL_DECREMENT * (fabs(t * fx) + fabs(phi)):
            return x_arr, it, CONVERGED
        lam = sqrt(lam2) if lam2 > 0.0 else 0.0
        damped = 1.0 / (1.0 + lam)
        step = 1.0
        accepted = 0
        for attempt in range(80):
            for k in range(m):
                xn[k] = x[k] + step * dx[k]
            phin = _barrier(xn, Gv, hv, Av, bv, Cv, dv, ov)
            if phin < INFINITY:
                if lam < _FULL_STEP_DECREMENT or step <= damped:
                    accepted = 1
                    break
                if t * step * fdx + (phin - phi) <= -_ARMIJO * step * lam2:
                    accepted = 1
                    break
            if step > damped and step * 0.5 < damped:
                step = damped
            else:
                step *= 0.5
        if not accepted:
            return x_arr, it, STALLED
        gain = -(t * step * fdx + (phin - phi))
        if gain <= _STALL_GAIN * (fabs(t * fx) + fabs(phi) + 1.0):
            flat += 1
            if flat >= _STALL_STEPS:
                return x_arr, it + 1, STALLED
        else:
            flat = 0
        nrm = 0.0
        for k in range(m):
            x[k] = xn[k]
            nrm += x[k] * x[k]
        phi = phin
        if stop_idx >= 0 and x[stop_idx] < stop_below:
            return x_arr, it + 1, STOPPED
        if sqrt(nrm) > _UNBOUNDED_NORM:
            return x_arr, it + 1, UNBOUNDED
    return x_arr, max_iter, MAX_ITER
