"""Spatial latent-class model for noisy classifier labels.

Each tract has a latent positive rate ``r_c = logistic(alpha + X_c beta +
phi_c sigma_phi)``; the classifier flips labels with tract-independent
rates ``theta_tpr = p(yhat=1 | y=1)`` and ``theta_fpr = p(yhat=1 | y=0)``.
``phi`` carries an intrinsic CAR prior with a soft sum-to-zero constraint
per connected component.

The readable constrained-space functions here (``log_likelihood``,
``log_prior``, ``log_jacobian``) define the density; the fused kernels in
``_backend`` evaluate the same quantity and its gradient quickly.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit, log_expit, logit

from . import _backend
from .graph import TractGraph
from .ingest import CountTable, FeatureMatrix

log = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Priors:
    """Prior hyperparameters; all scales are standard deviations."""

    alpha_mean: float = -5.0
    alpha_sd: float = 2.0
    beta_mean: float = 0.0
    beta_sd: float = 2.0
    theta_mean: float = 0.0
    theta_sd: float = 2.0
    sigma_sd: float = 1.0
    sum_zero_scale: float = 0.001

    def as_array(self):
        return np.array([self.alpha_mean, self.alpha_sd, self.beta_mean, self.beta_sd,
                         self.theta_mean, self.theta_sd, self.sigma_sd], dtype=np.float64)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in (d or {}).items()})


@dataclass
class ModelParams:
    alpha: float
    beta: np.ndarray
    phi: np.ndarray
    sigma_phi: float
    theta_tpr: float
    theta_fpr: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=np.float64))

    def check(self, allow_boundary=False):
        """Validate; ``allow_boundary`` admits a perfect classifier (rates
        of exactly 0 or 1), which is useful for simulation only."""
        if not self.sigma_phi > 0:
            raise ModelError("sigma_phi must be positive")
        if allow_boundary:
            if not 0 <= self.theta_fpr < self.theta_tpr <= 1:
                raise ModelError("need 0 <= theta_fpr < theta_tpr <= 1")
        elif not 0 < self.theta_fpr < self.theta_tpr < 1:
            raise ModelError("need 0 < theta_fpr < theta_tpr < 1")
        vals = [self.alpha, self.sigma_phi, self.theta_tpr, self.theta_fpr]
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(self.beta))
                and np.all(np.isfinite(self.phi))):
            raise ModelError("parameters must be finite")
        return self


class KernelData:
    """Flat arrays consumed by the compiled and numpy kernels."""

    def __init__(self, counts, X, edges, comp, comp_sd, prior):
        self.counts = np.ascontiguousarray(counts, dtype=np.float64)
        self.X = np.ascontiguousarray(X, dtype=np.float64).reshape(self.counts.shape[0], -1)
        self.edges = np.ascontiguousarray(edges, dtype=np.int32).reshape(-1, 2)
        self.comp = np.ascontiguousarray(comp, dtype=np.int32)
        self.comp_sd = np.ascontiguousarray(comp_sd, dtype=np.float64)
        self.prior = np.ascontiguousarray(prior, dtype=np.float64)
        self.n = self.counts.shape[0]
        self.p = self.X.shape[1]


@dataclass
class ModelData:
    """Counts, optional features, and the adjacency graph, over one tract order."""

    counts: CountTable
    graph: TractGraph
    features: Optional[FeatureMatrix] = None
    priors: Priors = field(default_factory=Priors)

    def __post_init__(self):
        ids = self.graph.tract_ids
        if self.counts.tract_ids != ids:
            self.counts = self.counts.reorder(ids)
        if self.features is None:
            self.features = FeatureMatrix.empty(ids)
        elif self.features.tract_ids != ids:
            self.features = self.features.reorder(ids)
        comp = self.graph.components
        sizes = np.bincount(comp, minlength=1).astype(np.float64)
        if sizes.size > 1:
            log.warning("graph has %d connected components; applying sum-to-zero per component",
                        sizes.size)
        self.kernel = KernelData(self.counts.counts, self.features.values, self.graph.edge_index,
                                 comp, self.priors.sum_zero_scale * sizes, self.priors.as_array())

    @property
    def n(self):
        return self.graph.n

    @property
    def p(self):
        return self.features.p

    @property
    def dim(self):
        return self.n + self.p + 4

    @property
    def tract_ids(self):
        return self.graph.tract_ids

    def with_counts(self, counts):
        return ModelData(counts, self.graph, self.features, self.priors)

    def without_features(self):
        return ModelData(self.counts, self.graph, None, self.priors)

    def parameter_names(self):
        names = ["alpha"] + [f"beta[{n}]" for n in self.features.names]
        names += [f"phi[{t}]" for t in self.tract_ids]
        return names + ["sigma_phi", "theta_fpr", "theta_tpr"]


# -- parameter transforms ---------------------------------------------------

def constrain(u, n, p):
    """Unconstrained vector -> ``ModelParams``."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (n + p + 4,):
        raise ModelError(f"expected vector of length {n + p + 4}, got shape {u.shape}")
    a1, a2 = u[2 + p + n], u[3 + p + n]
    return ModelParams(
        alpha=float(u[0]), beta=u[1:1 + p].copy(), phi=u[1 + p:1 + p + n].copy(),
        sigma_phi=float(np.exp(u[1 + p + n])),
        theta_tpr=float(expit(a1 + np.exp(a2))), theta_fpr=float(expit(a1)),
    )


def unconstrain(params):
    """``ModelParams`` -> unconstrained vector."""
    params.check()
    a1 = logit(params.theta_fpr)
    a2 = np.log(logit(params.theta_tpr) - a1)
    return np.concatenate([[params.alpha], params.beta, params.phi,
                           [np.log(params.sigma_phi), a1, a2]]).astype(np.float64)


def constrain_draws(U, n, p):
    """Vectorised ``constrain`` over rows; returns a dict of arrays."""
    U = np.asarray(U, dtype=np.float64)
    a1, a2 = U[..., 2 + p + n], U[..., 3 + p + n]
    return {
        "alpha": U[..., 0], "beta": U[..., 1:1 + p], "phi": U[..., 1 + p:1 + p + n],
        "sigma_phi": np.exp(U[..., 1 + p + n]),
        "theta_fpr": expit(a1), "theta_tpr": expit(a1 + np.exp(a2)),
    }


def risk_from_unconstrained(U, data):
    """Per-draw tract risks, shape ``U.shape[:-1] + (n,)``."""
    d = constrain_draws(U, data.n, data.p)
    eta = d["alpha"][..., None] + d["phi"] * d["sigma_phi"][..., None]
    if data.p:
        eta = eta + d["beta"] @ data.features.values.T
    return expit(eta)


# -- density ----------------------------------------------------------------

def tract_risk(params, data):
    """``r_c = logistic(alpha + X_c beta + phi_c sigma_phi)`` per tract."""
    return expit(_linear_predictor(params, data))


def _linear_predictor(params, data):
    if params.phi.size != data.n or params.beta.size != data.p:
        raise ModelError(f"parameter dimensions (beta {params.beta.size}, phi {params.phi.size}) "
                         f"do not match data (p={data.p}, n={data.n})")
    eta = params.alpha + params.phi * params.sigma_phi
    if data.p:
        eta = eta + data.features.values @ params.beta
    return eta


class CellProbs(NamedTuple):
    p11: np.ndarray  # yhat=1, y=1
    p01: np.ndarray  # yhat=0, y=1
    p10: np.ndarray  # yhat=1, y=0
    p00: np.ndarray  # yhat=0, y=0
    p1: np.ndarray   # yhat=1 marginal
    p0: np.ndarray   # yhat=0 marginal


def cell_probs(r, theta_tpr, theta_fpr):
    """Joint and classifier-marginal probabilities for risk ``r``."""
    r = np.asarray(r, dtype=np.float64)
    p11 = r * theta_tpr
    p01 = r * (1.0 - theta_tpr)
    p10 = (1.0 - r) * theta_fpr
    p00 = (1.0 - r) * (1.0 - theta_fpr)
    return CellProbs(p11, p01, p10, p00, p11 + p10, p01 + p00)


def _log_cells(eta, theta_tpr, theta_fpr):
    lr, l1r = log_expit(eta), log_expit(-eta)
    with np.errstate(divide="ignore"):
        lT, l1T = np.log(theta_tpr), np.log1p(-theta_tpr)
        lF, l1F = np.log(theta_fpr), np.log1p(-theta_fpr)
    l11, l01, l10, l00 = lr + lT, lr + l1T, l1r + lF, l1r + l1F
    return l10, l11, np.logaddexp(l11, l10), l00, l01, np.logaddexp(l01, l00)


def log_likelihood(params, data):
    """Labeled images contribute joint cell log-probabilities, unlabeled
    ones the classifier-marginal log-probability."""
    eta = _linear_predictor(params, data)
    logs = np.column_stack(_log_cells(eta, params.theta_tpr, params.theta_fpr))
    c = data.counts.counts
    with np.errstate(invalid="ignore"):
        terms = np.where(c > 0, c * logs, 0.0)
    return float(terms.sum())


def _normal_lp(x, mean, sd):
    z = (np.asarray(x, dtype=np.float64) - mean) / sd
    return -0.5 * z * z - np.log(sd) - _HALF_LOG_2PI


def icar_pairwise(phi, graph):
    """Negative half-sum of squared differences over graph edges."""
    e = graph.edge_index
    d = phi[e[:, 0]] - phi[e[:, 1]]
    return -0.5 * float(np.dot(d, d))


def log_prior(params, data):
    """Sum of prior log-densities in constrained space (constants kept)."""
    pr = data.priors
    lp = float(_normal_lp(params.alpha, pr.alpha_mean, pr.alpha_sd))
    lp += float(np.sum(_normal_lp(params.beta, pr.beta_mean, pr.beta_sd)))
    for th in (params.theta_tpr, params.theta_fpr):
        # logit-normal density in theta space
        lp += float(_normal_lp(logit(th), pr.theta_mean, pr.theta_sd)) - math.log(th) - math.log1p(-th)
    lp += math.log(2.0) + float(_normal_lp(params.sigma_phi, 0.0, pr.sigma_sd))
    lp += icar_pairwise(params.phi, data.graph)
    comp = data.graph.components
    sizes = np.bincount(comp, minlength=1)
    sums = np.bincount(comp, weights=params.phi, minlength=sizes.size)
    lp += float(np.sum(_normal_lp(sums, 0.0, pr.sum_zero_scale * sizes)))
    return lp


def log_jacobian(u, n, p):
    """Log-determinant of the unconstrained -> constrained map."""
    s, a1, a2 = u[1 + p + n], u[2 + p + n], u[3 + p + n]
    b = a1 + math.exp(a2)
    return float(s + log_expit(a1) + log_expit(-a1) + log_expit(b) + log_expit(-b) + a2)


def _check_u(u, data):
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (data.dim,):
        raise ModelError(f"expected vector of length {data.dim}, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ModelError("unconstrained parameters must be finite")
    return u


def log_posterior_unconstrained(u, data):
    """Unnormalised log posterior in unconstrained space."""
    return _backend.logp(_check_u(u, data), data.kernel)


def grad_log_posterior(u, data):
    """Exact gradient of ``log_posterior_unconstrained``."""
    return _backend.logp_grad(_check_u(u, data), data.kernel)[1]


def log_posterior_reference(u, data):
    """Same density composed from the readable pieces; slow, for checks."""
    u = _check_u(u, data)
    params = constrain(u, data.n, data.p)
    return log_likelihood(params, data) + log_prior(params, data) + log_jacobian(u, data.n, data.p)


def prior_mean_point(data):
    """Unconstrained point at the prior location (alpha at its prior mean)."""
    u = np.zeros(data.dim)
    u[0] = data.priors.alpha_mean
    u[1:1 + data.p] = data.priors.beta_mean
    u[2 + data.p + data.n] = data.priors.theta_mean
    return u
