"""Pure numpy implementations of the hot kernels.

Mirrors the API of the compiled ``_kernels`` module exactly; selected by
``floodrisk._backend`` when the extension is unavailable or when
``FLOODRISK_PURE_PYTHON`` is set.

Unconstrained layout (n tracts, p features)::

    [alpha, beta_1..beta_p, phi_1..phi_n, log_sigma, a1, a2]

with theta_fpr = logistic(a1), theta_tpr = logistic(a1 + exp(a2)).
Count columns are ``n10, n11, n1q, n00, n01, n0q`` (first digit the
classifier label, second the annotation, q = unknown).
"""
import math

import numpy as np

NAME = "numpy"

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# prior vector layout shared with the compiled kernel
A_MEAN, A_SD, B_MEAN, B_SD, T_MEAN, T_SD, S_SD = range(7)

_CHUNK = 4096


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _log_sigmoid_scalar(x):
    if x > 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _normal_lp(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - math.log(sd) - _HALF_LOG_2PI


def _unpack(u, kd):
    n, p = kd.n, kd.p
    alpha = u[0]
    beta = u[1:1 + p]
    phi = u[1 + p:1 + p + n]
    s, a1, a2 = u[1 + p + n], u[2 + p + n], u[3 + p + n]
    return alpha, beta, phi, s, a1, a2


def _terms(u, kd, want_grad):
    # far-out proposals overflow; report nan like the compiled kernel so
    # callers treat the point as divergent
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            return _terms_impl(u, kd, want_grad)
        except OverflowError:
            return math.nan, (np.full(u.size, math.nan) if want_grad else None)


def _terms_impl(u, kd, want_grad):
    n, p = kd.n, kd.p
    pr = kd.prior
    alpha, beta, phi, s, a1, a2 = _unpack(u, kd)
    sigma = math.exp(s)
    e2 = math.exp(a2)
    b = a1 + e2

    eta = alpha + phi * sigma
    if p:
        eta = eta + kd.X @ beta
    lr = _log_sigmoid(eta)
    l1r = _log_sigmoid(-eta)
    lT, l1T = _log_sigmoid_scalar(b), _log_sigmoid_scalar(-b)
    lF, l1F = _log_sigmoid_scalar(a1), _log_sigmoid_scalar(-a1)

    lp11 = lr + lT
    lp01 = lr + l1T
    lp10 = l1r + lF
    lp00 = l1r + l1F
    lp1 = np.logaddexp(lp11, lp10)
    lp0 = np.logaddexp(lp01, lp00)

    c = kd.counts
    n10, n11, n1q, n00, n01, n0q = (c[:, k] for k in range(6))
    ll = float(np.sum(n10 * lp10 + n11 * lp11 + n1q * lp1
                      + n00 * lp00 + n01 * lp01 + n0q * lp0))

    # priors in unconstrained space; theta Jacobians cancel the
    # logit-normal 1/(theta(1-theta)) factors, leaving normals on a1 and b
    lp = ll
    lp += _normal_lp(alpha, pr[A_MEAN], pr[A_SD])
    if p:
        zb = (beta - pr[B_MEAN]) / pr[B_SD]
        lp += float(np.sum(-0.5 * zb * zb)) - p * (math.log(pr[B_SD]) + _HALF_LOG_2PI)
    lp += _normal_lp(a1, pr[T_MEAN], pr[T_SD])
    lp += _normal_lp(b, pr[T_MEAN], pr[T_SD])
    lp += a2
    lp += math.log(2.0) + _normal_lp(sigma, 0.0, pr[S_SD]) + s

    ei, ej = kd.edges[:, 0], kd.edges[:, 1]
    diff = phi[ei] - phi[ej]
    lp += -0.5 * float(np.dot(diff, diff))
    sums = np.bincount(kd.comp, weights=phi, minlength=kd.comp_sd.size)
    zs = sums / kd.comp_sd
    lp += float(np.sum(-0.5 * zs * zs - np.log(kd.comp_sd))) - kd.comp_sd.size * _HALF_LOG_2PI

    if not want_grad:
        return lp, None

    r = np.exp(lr)
    one_r = np.exp(l1r)
    w1 = np.exp(lp11 - lp1)
    w0 = np.exp(lp01 - lp0)
    T = math.exp(lT)
    one_T = math.exp(l1T)
    F = math.exp(lF)
    one_F = math.exp(l1F)

    g_eta = (n11 + n01) * one_r - (n10 + n00) * r + n1q * (w1 - r) + n0q * (w0 - r)
    d_b = float(np.sum(n11 * one_T - n01 * T + n1q * w1 * one_T - n0q * w0 * T))
    d_a1 = float(np.sum(n10 * one_F - n00 * F + n1q * (1.0 - w1) * one_F - n0q * (1.0 - w0) * F))

    grad = np.empty_like(u)
    grad[0] = g_eta.sum() - (alpha - pr[A_MEAN]) / pr[A_SD] ** 2
    if p:
        grad[1:1 + p] = kd.X.T @ g_eta - (beta - pr[B_MEAN]) / pr[B_SD] ** 2
    g_phi = g_eta * sigma
    np.subtract.at(g_phi, ei, diff)
    np.add.at(g_phi, ej, diff)
    g_phi -= (sums / kd.comp_sd ** 2)[kd.comp]
    grad[1 + p:1 + p + n] = g_phi
    grad[1 + p + n] = float(np.dot(g_eta, phi)) * sigma - sigma * sigma / pr[S_SD] ** 2 + 1.0
    d_b -= (b - pr[T_MEAN]) / pr[T_SD] ** 2
    grad[2 + p + n] = d_a1 + d_b - (a1 - pr[T_MEAN]) / pr[T_SD] ** 2
    grad[3 + p + n] = d_b * e2 + 1.0
    return lp, grad


def logp(u, kd):
    """Log posterior density at unconstrained point ``u``."""
    return _terms(np.asarray(u, dtype=np.float64), kd, False)[0]


def logp_grad(u, kd):
    """Log posterior density and its gradient at ``u``."""
    return _terms(np.asarray(u, dtype=np.float64), kd, True)


def trajectory(q, p, grad, step, n_steps, inv_mass, kd):
    """Run ``n_steps`` leapfrog steps under the model's log posterior.

    Returns ``(q, p, logp, grad, finite)``; integration stops early and
    ``finite`` is False as soon as the density or gradient is non-finite.
    """
    q = np.array(q, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    g = np.array(grad, dtype=np.float64)
    lp = math.nan
    for _ in range(n_steps):
        p += 0.5 * step * g
        q += step * inv_mass * p
        lp, g = _terms(q, kd, True)
        if not (math.isfinite(lp) and np.all(np.isfinite(g))):
            return q, p, lp, g, False
        p += 0.5 * step * g
    return q, p, lp, g, True


def ring_contains(px, py, ring):
    """Classify points against one closed ring.

    Returns int8 codes: 0 outside, 1 strictly inside, 2 on the boundary.
    Even-odd ray casting toward +x.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    ring = np.asarray(ring, dtype=np.float64)
    if px.size > _CHUNK:
        return np.concatenate([ring_contains(px[i:i + _CHUNK], py[i:i + _CHUNK], ring)
                               for i in range(0, px.size, _CHUNK)])
    x1, y1 = ring[:-1, 0], ring[:-1, 1]
    x2, y2 = ring[1:, 0], ring[1:, 1]
    X = px[:, None]
    Y = py[:, None]

    dx = x2 - x1
    dy = y2 - y1
    cross = dx * (Y - y1) - dy * (X - x1)
    tol = 1e-12 * (dx * dx + dy * dy)
    on = (np.abs(cross) <= tol) \
        & (X >= np.minimum(x1, x2)) & (X <= np.maximum(x1, x2)) \
        & (Y >= np.minimum(y1, y2)) & (Y <= np.maximum(y1, y2))

    straddle = (y1 > Y) != (y2 > Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (Y - y1) * dx / dy
    crossings = np.sum(straddle & (X < xint), axis=1)

    out = (crossings % 2).astype(np.int8)
    out[np.any(on, axis=1)] = 2
    return out
