# cython: language_level=3
"""Compiled hot kernels: fused log posterior + gradient, leapfrog
trajectories, and ray-casting point classification.

API-compatible with ``floodrisk._fallback``; see that module for the
parameter layout.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, sqrt, isfinite, M_PI

cnp.import_array()

NAME = "cython"

cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)
cdef double LOG2 = log(2.0)


cdef inline double _logsig(double x) noexcept nogil:
    if x > 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


cdef inline double _lae(double a, double b) noexcept nogil:
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _normal_lp(double x, double mean, double sd) noexcept nogil:
    cdef double z = (x - mean) / sd
    return -0.5 * z * z - log(sd) - HALF_LOG_2PI


cdef double _eval(const double[::1] u,
                  const double[:, ::1] counts,
                  const double[:, ::1] X,
                  const int[:, ::1] edges,
                  const int[::1] comp,
                  const double[::1] comp_sd,
                  const double[::1] pr,
                  double[::1] sums,
                  double[::1] grad,
                  bint want_grad) noexcept nogil:
    cdef Py_ssize_t n = counts.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t m = edges.shape[0]
    cdef Py_ssize_t K = comp_sd.shape[0]
    cdef Py_ssize_t c, j, k, i0, i1, ip
    cdef double alpha = u[0]
    cdef double s = u[1 + p + n]
    cdef double a1 = u[2 + p + n]
    cdef double a2 = u[3 + p + n]
    cdef double sigma = exp(s)
    cdef double e2 = exp(a2)
    cdef double b = a1 + e2
    cdef double lT = _logsig(b), l1T = _logsig(-b)
    cdef double lF = _logsig(a1), l1F = _logsig(-a1)
    cdef double T = exp(lT), one_T = exp(l1T), F = exp(lF), one_F = exp(l1F)
    cdef double eta, lr, l1r, lp11, lp01, lp10, lp00, lp1, lp0
    cdef double r, one_r, w1, w0, g, phi_c, d
    cdef double n10, n11, n1q, n00, n01, n0q
    cdef double ll = 0.0, lp, d_b = 0.0, d_a1 = 0.0, d_s = 0.0, d_alpha = 0.0
    ip = 1 + p

    if want_grad:
        for j in range(p):
            grad[1 + j] = 0.0

    for c in range(n):
        eta = alpha
        for j in range(p):
            eta += X[c, j] * u[1 + j]
        phi_c = u[ip + c]
        eta += phi_c * sigma
        lr = _logsig(eta)
        l1r = _logsig(-eta)
        lp11 = lr + lT
        lp01 = lr + l1T
        lp10 = l1r + lF
        lp00 = l1r + l1F
        lp1 = _lae(lp11, lp10)
        lp0 = _lae(lp01, lp00)
        n10 = counts[c, 0]; n11 = counts[c, 1]; n1q = counts[c, 2]
        n00 = counts[c, 3]; n01 = counts[c, 4]; n0q = counts[c, 5]
        ll += n10 * lp10 + n11 * lp11 + n1q * lp1 + n00 * lp00 + n01 * lp01 + n0q * lp0
        if want_grad:
            r = exp(lr)
            one_r = exp(l1r)
            w1 = exp(lp11 - lp1)
            w0 = exp(lp01 - lp0)
            g = (n11 + n01) * one_r - (n10 + n00) * r + n1q * (w1 - r) + n0q * (w0 - r)
            d_alpha += g
            for j in range(p):
                grad[1 + j] += X[c, j] * g
            grad[ip + c] = g * sigma
            d_s += g * phi_c
            d_b += n11 * one_T - n01 * T + n1q * w1 * one_T - n0q * w0 * T
            d_a1 += n10 * one_F - n00 * F + n1q * (1.0 - w1) * one_F - n0q * (1.0 - w0) * F

    lp = ll
    lp += _normal_lp(alpha, pr[0], pr[1])
    for j in range(p):
        lp += _normal_lp(u[1 + j], pr[2], pr[3])
    lp += _normal_lp(a1, pr[4], pr[5])
    lp += _normal_lp(b, pr[4], pr[5])
    lp += a2
    lp += LOG2 + _normal_lp(sigma, 0.0, pr[6]) + s

    for k in range(m):
        i0 = edges[k, 0]
        i1 = edges[k, 1]
        d = u[ip + i0] - u[ip + i1]
        lp -= 0.5 * d * d
        if want_grad:
            grad[ip + i0] -= d
            grad[ip + i1] += d

    for k in range(K):
        sums[k] = 0.0
    for c in range(n):
        sums[comp[c]] += u[ip + c]
    for k in range(K):
        lp += _normal_lp(sums[k], 0.0, comp_sd[k])

    if want_grad:
        for c in range(n):
            k = comp[c]
            grad[ip + c] -= sums[k] / (comp_sd[k] * comp_sd[k])
        grad[0] = d_alpha - (alpha - pr[0]) / (pr[1] * pr[1])
        for j in range(p):
            grad[1 + j] -= (u[1 + j] - pr[2]) / (pr[3] * pr[3])
        grad[ip + n] = d_s * sigma - sigma * sigma / (pr[6] * pr[6]) + 1.0
        d_b -= (b - pr[4]) / (pr[5] * pr[5])
        grad[ip + n + 1] = d_a1 + d_b - (a1 - pr[4]) / (pr[5] * pr[5])
        grad[ip + n + 2] = d_b * e2 + 1.0
    return lp


def logp(u, kd):
    """Log posterior density at unconstrained point ``u``."""
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] sums = np.empty(kd.comp_sd.shape[0])
    cdef double[::1] dummy = np.empty(1)
    return _eval(uu, kd.counts, kd.X, kd.edges, kd.comp, kd.comp_sd, kd.prior,
                 sums, dummy, False)


def logp_grad(u, kd):
    """Log posterior density and its gradient at ``u``."""
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    grad = np.empty(uu.shape[0])
    cdef double[::1] gv = grad
    cdef double[::1] sums = np.empty(kd.comp_sd.shape[0])
    cdef double lp = _eval(uu, kd.counts, kd.X, kd.edges, kd.comp, kd.comp_sd,
                           kd.prior, sums, gv, True)
    return lp, grad


def trajectory(q, p, grad, double step, int n_steps, inv_mass, kd):
    """Run ``n_steps`` leapfrog steps under the model's log posterior.

    Returns ``(q, p, logp, grad, finite)``; stops early with ``finite``
    False when the density or gradient becomes non-finite.
    """
    qa = np.array(q, dtype=np.float64)
    pa = np.array(p, dtype=np.float64)
    ga = np.array(grad, dtype=np.float64)
    cdef double[::1] qv = qa, pv = pa, gv = ga
    cdef const double[::1] im = np.ascontiguousarray(inv_mass, dtype=np.float64)
    cdef const double[:, ::1] counts = kd.counts
    cdef const double[:, ::1] X = kd.X
    cdef const int[:, ::1] edges = kd.edges
    cdef const int[::1] comp = kd.comp
    cdef const double[::1] comp_sd = kd.comp_sd
    cdef const double[::1] pr = kd.prior
    cdef double[::1] sums = np.empty(comp_sd.shape[0])
    cdef Py_ssize_t d = qv.shape[0], i
    cdef int t
    cdef double lp = float("nan")
    cdef bint ok = True
    with nogil:
        for t in range(n_steps):
            for i in range(d):
                pv[i] += 0.5 * step * gv[i]
                qv[i] += step * im[i] * pv[i]
            lp = _eval(qv, counts, X, edges, comp, comp_sd, pr, sums, gv, True)
            if not isfinite(lp):
                ok = False
                break
            for i in range(d):
                if not isfinite(gv[i]):
                    ok = False
                    break
            if not ok:
                break
            for i in range(d):
                pv[i] += 0.5 * step * gv[i]
    return qa, pa, lp, ga, bool(ok)


def ring_contains(px, py, ring):
    """Classify points against one closed ring.

    Returns int8 codes: 0 outside, 1 strictly inside, 2 on the boundary.
    """
    cdef const double[::1] xs = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] ys = np.ascontiguousarray(py, dtype=np.float64)
    cdef const double[:, ::1] rg = np.ascontiguousarray(ring, dtype=np.float64)
    out = np.zeros(xs.shape[0], dtype=np.int8)
    cdef cnp.int8_t[::1] ov = out
    cdef Py_ssize_t npt = xs.shape[0], nseg = rg.shape[0] - 1, i, k
    cdef double x, y, x1, y1, x2, y2, dx, dy, cross, xint
    cdef int inside
    cdef bint on
    with nogil:
        for i in range(npt):
            x = xs[i]
            y = ys[i]
            inside = 0
            on = False
            for k in range(nseg):
                x1 = rg[k, 0]; y1 = rg[k, 1]
                x2 = rg[k + 1, 0]; y2 = rg[k + 1, 1]
                dx = x2 - x1
                dy = y2 - y1
                cross = dx * (y - y1) - dy * (x - x1)
                if (fabs(cross) <= 1e-12 * (dx * dx + dy * dy)
                        and x >= (x1 if x1 < x2 else x2) and x <= (x2 if x1 < x2 else x1)
                        and y >= (y1 if y1 < y2 else y2) and y <= (y2 if y1 < y2 else y1)):
                    on = True
                    break
                if (y1 > y) != (y2 > y):
                    xint = x1 + (y - y1) * dx / dy
                    if x < xint:
                        inside ^= 1
            ov[i] = 2 if on else inside
    return out
