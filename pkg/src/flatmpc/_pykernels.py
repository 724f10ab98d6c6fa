"""Pure numpy implementation of the hot numerical kernels.

Both this module and the compiled ``_ckernels`` expose the same functions
with the same semantics; ``flatmpc._backend`` picks one at import time.
"""

import math

import numpy as np

# Status codes returned by `center`.
CONVERGED = 0
STOPPED = 1
MAX_ITER = 2
STALLED = 3
UNBOUNDED = 4

_ARMIJO = 0.01
_FULL_STEP_DECREMENT = 0.25
# Newton decrements below this fraction of the merit value are roundoff.
_REL_DECREMENT = 1e-13
_UNBOUNDED_NORM = 1e15
# Accepted steps whose merit gain is below this fraction of the merit scale
# make no progress; this many in a row means roundoff has taken over.
_STALL_GAIN = 1e-14
_STALL_STEPS = 5


def se_ard(X1, X2, inv_ls2, variance):
    """Squared-exponential ARD kernel matrix ``variance * exp(-0.5 * d^2)``."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    diff = X1[:, None, :] - X2[None, :, :]
    d2 = np.einsum("ijk,k->ij", diff * diff, np.asarray(inv_ls2, dtype=float))
    return variance * np.exp(-0.5 * d2)


def barrier(x, G, h, A, b, C, d, offs):
    """Log-barrier value at ``x``; ``inf`` outside the strict interior."""
    val = 0.0
    if G.shape[0]:
        slack = h - G @ x
        if np.any(slack <= 0.0):
            return math.inf
        val -= np.log(slack).sum()
    for i in range(C.shape[0]):
        r = A[offs[i]:offs[i + 1]] @ x + b[offs[i]:offs[i + 1]]
        s = C[i] @ x + d[i]
        n = math.sqrt(r @ r)
        if s - n <= 0.0:
            return math.inf
        val -= math.log(s - n) + math.log(s + n)
    return val


def _grad_hess(x, t, f, G, h, A, b, C, d, offs, AtA):
    m = x.shape[0]
    grad = t * f
    hess = np.zeros((m, m))
    if G.shape[0]:
        inv = 1.0 / (h - G @ x)
        grad = grad + G.T @ inv
        Gs = G * inv[:, None]
        hess += Gs.T @ Gs
    for i in range(C.shape[0]):
        Ai = A[offs[i]:offs[i + 1]]
        r = Ai @ x + b[offs[i]:offs[i + 1]]
        c = C[i]
        s = c @ x + d[i]
        n = math.sqrt(r @ r)
        D = (s - n) * (s + n)
        gv = (2.0 * (Ai.T @ r) - 2.0 * s * c) / D
        grad = grad + gv
        hess += (2.0 / D) * (AtA[i] - np.outer(c, c)) + np.outer(gv, gv)
    return grad, hess


def _newton_direction(grad, hess):
    scale = max(float(np.max(np.abs(np.diag(hess)))), 1e-300)
    reg = 0.0
    for _ in range(8):
        try:
            L = np.linalg.cholesky(hess + reg * np.eye(hess.shape[0]))
        except np.linalg.LinAlgError:
            reg = 1e-14 * scale if reg == 0.0 else reg * 100.0
            continue
        y = np.linalg.solve(L, -grad)
        return np.linalg.solve(L.T, y)
    return None


def center(x, t, f, G, h, A, b, C, d, offs, AtA, tol, max_iter,
           stop_idx, stop_below):
    """Newton centering for ``min t*f'x + barrier(x)`` from a strictly feasible ``x``.

    Returns ``(x, iterations, status)``. With ``stop_idx >= 0`` the loop exits
    early (status STOPPED) once ``x[stop_idx] < stop_below``.
    """
    x = np.array(x, dtype=float)
    phi = barrier(x, G, h, A, b, C, d, offs)
    flat = 0
    for it in range(max_iter):
        grad, hess = _grad_hess(x, t, f, G, h, A, b, C, d, offs, AtA)
        dx = _newton_direction(grad, hess)
        if dx is None:
            return x, it, STALLED
        lam2 = -float(grad @ dx)
        if lam2 * 0.5 <= tol + _REL_DECREMENT * (abs(t * float(f @ x)) + abs(phi)):
            return x, it, CONVERGED
        lam = math.sqrt(max(lam2, 0.0))
        fdx = float(f @ dx)
        damped = 1.0 / (1.0 + lam)
        step = 1.0
        accepted = False
        for _ in range(80):
            xn = x + step * dx
            phin = barrier(xn, G, h, A, b, C, d, offs)
            if phin < math.inf:
                if lam < _FULL_STEP_DECREMENT or step <= damped:
                    accepted = True
                    break
                if t * step * fdx + (phin - phi) <= -_ARMIJO * step * lam2:
                    accepted = True
                    break
            if step > damped and step * 0.5 < damped:
                step = damped
            else:
                step *= 0.5
        if not accepted:
            return x, it, STALLED
        gain = -(t * step * fdx + (phin - phi))
        if gain <= _STALL_GAIN * (abs(t * float(f @ x)) + abs(phi) + 1.0):
            flat += 1
            if flat >= _STALL_STEPS:
                return x, it + 1, STALLED
        else:
            flat = 0
        x = xn
        phi = phin
        if stop_idx >= 0 and x[stop_idx] < stop_below:
            return x, it + 1, STOPPED
        if math.sqrt(x @ x) > _UNBOUNDED_NORM:
            return x, it + 1, UNBOUNDED
    return x, max_iter, MAX_ITER
