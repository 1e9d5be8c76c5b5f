"""Hamiltonian Monte Carlo with warmup adaptation, a random-walk
Metropolis reference sampler, and split-R-hat / ESS diagnostics."""
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _backend
from .model import ModelData, constrain_draws, prior_mean_point, risk_from_unconstrained

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    pass


@dataclass
class HmcConfig:
    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    target_accept: float = 0.8
    max_leapfrog_steps: int = 512
    master_seed: int = 0
    initial_jitter_scale: float = 0.5
    # dual averaging
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    threads: int = 1

    def __post_init__(self):
        for name in ("chains", "warmup_iters", "sampling_iters", "max_leapfrog_steps", "threads"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")
        if not self.initial_jitter_scale > 0:
            raise ValueError("initial_jitter_scale must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in (d or {}).items() if k in known})


# -- targets ----------------------------------------------------------------

class ModelTarget:
    """The model's unconstrained log posterior, with compiled trajectories."""

    def __init__(self, data):
        self.data = data
        self.dim = data.dim
        self._kd = data.kernel

    def logp(self, u):
        return _backend.logp(u, self._kd)

    def logp_grad(self, u):
        return _backend.logp_grad(u, self._kd)

    def trajectory(self, q, p, g, step, n_steps, inv_mass):
        return _backend.trajectory(q, p, g, step, n_steps, inv_mass, self._kd)

    def initial_point(self, rng, jitter):
        return prior_mean_point(self.data) + jitter * rng.standard_normal(self.dim)


class FunctionTarget:
    """Generic differentiable log density given as Python callables."""

    def __init__(self, logp, grad, dim, center=None):
        self._logp = logp
        self._grad = grad
        self.dim = dim
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64)
        self.data = None

    def logp(self, u):
        return float(self._logp(u))

    def logp_grad(self, u):
        return float(self._logp(u)), np.asarray(self._grad(u), dtype=np.float64)

    def trajectory(self, q, p, g, step, n_steps, inv_mass):
        res = leapfrog(q, p, step, n_steps, self._grad, inv_mass=inv_mass, initial_grad=g)
        if res.divergent:
            return res.position, res.momentum, math.nan, None, False
        lp, g1 = self.logp_grad(res.position)
        return res.position, res.momentum, lp, g1, bool(math.isfinite(lp))

    def initial_point(self, rng, jitter):
        return self.center + jitter * rng.standard_normal(self.dim)


def standard_normal_target(dim):
    return FunctionTarget(lambda u: -0.5 * float(np.dot(u, u)), lambda u: -np.asarray(u), dim)


def as_target(obj):
    if isinstance(obj, ModelData):
        return ModelTarget(obj)
    return obj


# -- integrator -------------------------------------------------------------

class LeapfrogResult(NamedTuple):
    position: np.ndarray
    momentum: np.ndarray
    divergent: bool


def leapfrog(position, momentum, step_size, n_steps, grad_fn, inv_mass=None, initial_grad=None):
    """Leapfrog integration for ``H(q, p) = -log pi(q) + p' M^-1 p / 2``.

    ``grad_fn`` returns the gradient of the log density ``log pi``;
    ``inv_mass`` is the diagonal of ``M^-1`` (identity by default). A
    non-finite gradient stops integration and marks the result divergent.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    q = np.array(position, dtype=np.float64)
    p = np.array(momentum, dtype=np.float64)
    im = np.ones_like(q) if inv_mass is None else np.asarray(inv_mass, dtype=np.float64)
    g = np.asarray(grad_fn(q) if initial_grad is None else initial_grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        return LeapfrogResult(q, p, True)
    for _ in range(n_steps):
        p += 0.5 * step_size * g
        q += step_size * im * p
        g = np.asarray(grad_fn(q), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            return LeapfrogResult(q, p, True)
        p += 0.5 * step_size * g
    return LeapfrogResult(q, p, False)


# -- HMC --------------------------------------------------------------------

@dataclass
class PosteriorDraws:
    """Sampler output: unconstrained draws per chain plus per-iteration stats."""

    unconstrained: np.ndarray          # (chains, iters, dim)
    accept_stat: np.ndarray            # (chains, iters)
    divergent: np.ndarray              # (chains, iters) bool
    n_leapfrog: np.ndarray             # (chains, iters)
    step_size: np.ndarray              # (chains,)
    inv_mass: np.ndarray               # (chains, dim)
    warmup_divergences: np.ndarray     # (chains,)
    data: ModelData = field(default=None, repr=False)
    sampler: str = "hmc"

    @property
    def chains(self):
        return self.unconstrained.shape[0]

    @property
    def iters(self):
        return self.unconstrained.shape[1]

    @property
    def n_draws(self):
        return self.chains * self.iters

    @cached_property
    def constrained(self):
        if self.data is None:
            raise SamplerError("draws are not attached to model data")
        return constrain_draws(self.unconstrained, self.data.n, self.data.p)

    @cached_property
    def risk(self):
        """Per-draw tract risks, ``(chains, iters, n)``."""
        if self.data is None:
            raise SamplerError("draws are not attached to model data")
        return risk_from_unconstrained(self.unconstrained, self.data)

    def param_names(self):
        if self.data is None:
            return [f"u[{i}]" for i in range(self.unconstrained.shape[2])]
        return self.data.parameter_names()

    def param_matrix(self):
        """Constrained parameters, ``(chains, iters, k)`` in ``param_names`` order."""
        if self.data is None:
            return self.unconstrained
        c = self.constrained
        return np.concatenate([c["alpha"][..., None], c["beta"], c["phi"], c["sigma_phi"][..., None],
                               c["theta_fpr"][..., None], c["theta_tpr"][..., None]], axis=-1)

    def diagnostics(self):
        P = self.param_matrix()
        names = self.param_names()
        rhat = {n: split_rhat(P[..., i]) for i, n in enumerate(names)} if self.chains > 1 else {}
        ess_ = {n: ess(P[..., i]) for i, n in enumerate(names)}
        finite = [v for v in rhat.values() if np.isfinite(v)]
        return {
            "sampler": self.sampler,
            "chains": self.chains,
            "iters_per_chain": self.iters,
            "divergences": int(self.divergent.sum()),
            "warmup_divergences": self.warmup_divergences.astype(int).tolist(),
            "step_size": [float(s) for s in self.step_size],
            "mean_accept_stat": [float(a) for a in self.accept_stat.mean(axis=1)],
            "max_rhat": max(finite) if finite else None,
            "min_ess": min((v for v in ess_.values() if np.isfinite(v)), default=None),
            "rhat": {k: (None if not np.isfinite(v) else float(v)) for k, v in rhat.items()},
            "ess": {k: (None if not np.isfinite(v) else float(v)) for k, v in ess_.items()},
        }

    def write_csv(self, path, header_comment=None):
        """One row per draw: chain, iteration, constrained parameters."""
        P = self.param_matrix()
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iteration", *self.param_names()])
            for c in range(self.chains):
                for i in range(self.iters):
                    w.writerow([c, i, *(repr(float(v)) for v in P[c, i])])

    def write_diagnostics(self, path, extra=None):
        d = self.diagnostics()
        d.update(extra or {})
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)


class _DualAveraging:
    def __init__(self, step, target, gamma, t0, kappa):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step):
        self.mu = math.log(10.0 * step)
        self.hbar = 0.0
        self.log_step_bar = 0.0
        self.t = 0

    def update(self, accept_stat):
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.hbar = (1.0 - w) * self.hbar + w * (self.target - accept_stat)
        log_step = self.mu - math.sqrt(self.t) / self.gamma * self.hbar
        eta = self.t ** (-self.kappa)
        self.log_step_bar = eta * log_step + (1.0 - eta) * self.log_step_bar
        return math.exp(log_step)

    @property
    def final(self):
        return math.exp(self.log_step_bar)


def _hamiltonian(lp, p, inv_mass):
    return -lp + 0.5 * float(np.dot(inv_mass * p, p))


def _find_step(target, q, lp, g, inv_mass, rng):
    """Doubling/halving search until one-step acceptance crosses 0.5."""
    step = 1.0
    sqrt_m = 1.0 / np.sqrt(inv_mass)

    def log_ratio(step):
        p = rng.standard_normal(q.size) * sqrt_m
        _, p1, lp1, _, ok = target.trajectory(q, p, g, step, 1, inv_mass)
        if not ok:
            return -math.inf
        return _hamiltonian(lp, p, inv_mass) - _hamiltonian(lp1, p1, inv_mass)

    r = log_ratio(step)
    direction = 1 if r > math.log(0.5) else -1
    for _ in range(60):
        if direction == 1 and not r > math.log(0.5):
            break
        if direction == -1 and r > math.log(0.5):
            break
        step = step * 2.0 if direction == 1 else step / 2.0
        r = log_ratio(step)
    return step / 2.0 if direction == 1 else step


def _mass_windows(W):
    """Iteration indices at which the diagonal mass is re-estimated.

    Warmup: [0, 15%) step size only; [15%, 50%) first variance window;
    [50%, 90%) final window; [90%, 100%) step size only.
    """
    a, b, c = int(0.15 * W), int(0.5 * W), int(0.9 * W)
    if W < 20:
        return []
    return [(a, b), (b, c)]


def _regularized_var(x):
    n = x.shape[0]
    var = x.var(axis=0, ddof=1)
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _run_chain(target, cfg, chain):
    rng = np.random.default_rng(cfg.master_seed + chain)
    dim = target.dim
    for _ in range(100):
        q = target.initial_point(rng, cfg.initial_jitter_scale)
        lp, g = target.logp_grad(q)
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            break
    else:
        raise SamplerError(f"chain {chain}: no finite initial point found")

    inv_mass = np.ones(dim)
    step = _find_step(target, q, lp, g, inv_mass, rng)
    da = _DualAveraging(step, cfg.target_accept, cfg.gamma, cfg.t0, cfg.kappa)
    W, S = cfg.warmup_iters, cfg.sampling_iters
    windows = _mass_windows(W)
    window_draws = []

    out_q = np.empty((S, dim))
    out_acc = np.empty(S)
    out_div = np.zeros(S, dtype=bool)
    out_L = np.empty(S, dtype=np.int64)
    warm_div = 0

    for it in range(W + S):
        L = int(rng.integers(1, cfg.max_leapfrog_steps + 1))
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = _hamiltonian(lp, p0, inv_mass)
        q1, p1, lp1, g1, ok = target.trajectory(q, p0, g, step, L, inv_mass)
        divergent = not ok
        if ok:
            dh = _hamiltonian(lp1, p1, inv_mass) - h0
            divergent = not math.isfinite(dh) or dh > DIVERGENCE_THRESHOLD
        acc = 0.0 if divergent else (1.0 if dh <= 0 else math.exp(-dh))
        u = rng.random()
        if not divergent and u < acc:
            q, lp, g = q1, lp1, g1

        if it < W:
            warm_div += divergent
            step = da.update(acc)
            for k, (lo, hi) in enumerate(windows):
                if lo <= it < hi:
                    window_draws.append(q.copy())
                if it == hi - 1:
                    inv_mass = _regularized_var(np.array(window_draws))
                    window_draws = []
                    step = _find_step(target, q, lp, g, inv_mass, rng)
                    da.restart(step)
            if it == W - 1:
                if warm_div == W:
                    raise SamplerError(
                        f"chain {chain}: all {W} warmup transitions diverged "
                        f"(final step size {step:.3g}); check the model data or priors")
                step = da.final
        else:
            s = it - W
            out_q[s] = q
            out_acc[s] = acc
            out_div[s] = divergent
            out_L[s] = L
    return out_q, out_acc, out_div, out_L, step, inv_mass, warm_div


def hmc_run(model, config):
    """Multi-chain HMC with jittered path length.

    ``model`` is ``ModelData`` or any target exposing ``dim``, ``logp_grad``,
    ``trajectory`` and ``initial_point``. Chain ``i`` is seeded with
    ``master_seed + i``; results do not depend on thread scheduling.
    """
    target = as_target(model)
    if config.threads > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            res = list(ex.map(lambda c: _run_chain(target, config, c), range(config.chains)))
    else:
        res = [_run_chain(target, config, c) for c in range(config.chains)]
    draws = PosteriorDraws(
        unconstrained=np.stack([r[0] for r in res]),
        accept_stat=np.stack([r[1] for r in res]),
        divergent=np.stack([r[2] for r in res]),
        n_leapfrog=np.stack([r[3] for r in res]),
        step_size=np.array([r[4] for r in res]),
        inv_mass=np.stack([r[5] for r in res]),
        warmup_divergences=np.array([r[6] for r in res]),
        data=target.data,
    )
    log.info("hmc: %d chains x %d draws, step sizes %s, %d divergences", draws.chains, draws.iters,
             np.round(draws.step_size, 4).tolist(), int(draws.divergent.sum()))
    return draws


# -- random-walk reference ---------------------------------------------------

def mh_reference(model, iters, proposal_scale=None, seed=0, proposal_cov=None,
                 adapt_iters=None, init=None, thin=1):
    """Gaussian random-walk Metropolis on the same log density.

    Proposals are ``proposal_scale * chol(cov) @ z``. Without
    ``proposal_cov`` a pilot phase of ``adapt_iters`` iterations (not
    returned) estimates the covariance from its own draws; the kept run
    then uses a fixed proposal. ``proposal_scale`` defaults to
    ``2.38 / sqrt(dim)``.
    """
    target = as_target(model)
    dim = target.dim
    rng = np.random.default_rng(seed)
    scale = 2.38 / math.sqrt(dim) if proposal_scale is None else float(proposal_scale)
    if init is None:
        q = target.initial_point(rng, 0.1)
    else:
        q = np.array(init, dtype=np.float64)
    lp = target.logp(q)
    if not math.isfinite(lp):
        raise SamplerError("initial point has non-finite density")

    def run(q, lp, n, chol, keep):
        out = np.empty((n // thin if keep else 0, dim))
        acc = np.empty(n // thin if keep else 0)
        n_acc = 0
        block = 4096
        for start in range(0, n, block):
            m = min(block, n - start)
            Z = rng.standard_normal((m, dim)) @ chol.T * scale
            logu = np.log(rng.random(m))
            for k in range(m):
                prop = q + Z[k]
                lp1 = target.logp(prop)
                a = lp1 - lp
                if logu[k] < a:
                    q, lp = prop, lp1
                    n_acc += 1
                i = start + k
                if keep and i % thin == thin - 1:
                    out[i // thin] = q
                    acc[i // thin] = min(1.0, math.exp(a)) if a < 0 else 1.0
        return q, lp, out, acc, n_acc / max(n, 1)

    if proposal_cov is None:
        adapt_iters = max(1000, iters // 5) if adapt_iters is None else adapt_iters
        cov = np.eye(dim) * 0.01
        # successive pilot stages, each re-estimating the covariance
        stage = max(500, adapt_iters // 8)
        done = 0
        while done < adapt_iters:
            n = min(stage, adapt_iters - done)
            chol = np.linalg.cholesky(cov)
            q, lp, pilot, _, _ = run(q, lp, n, chol, True)
            if pilot.shape[0] > 2 * dim:
                cov = np.cov(pilot, rowvar=False) + 1e-10 * np.eye(dim)
            done += n
    else:
        cov = np.asarray(proposal_cov, dtype=np.float64)
    chol = np.linalg.cholesky(cov)
    q, lp, out, acc, rate = run(q, lp, iters, chol, True)
    log.info("mh_reference: %d iterations, acceptance %.3f", iters, rate)
    return PosteriorDraws(
        unconstrained=out[None], accept_stat=acc[None],
        divergent=np.zeros((1, out.shape[0]), dtype=bool),
        n_leapfrog=np.zeros((1, out.shape[0]), dtype=np.int64),
        step_size=np.array([scale]), inv_mass=np.diag(cov)[None],
        warmup_divergences=np.zeros(1, dtype=np.int64), data=target.data, sampler="rwm",
    )


# -- diagnostics ------------------------------------------------------------

def _chains_array(draws, index):
    if isinstance(draws, PosteriorDraws):
        return draws.param_matrix()[..., index]
    x = np.asarray(draws, dtype=np.float64)
    if index is not None and x.ndim == 3:
        x = x[..., index]
    return x


def _split(x):
    n = x.shape[1] // 2
    return np.vstack([x[:, :n], x[:, x.shape[1] - n:]])


def split_rhat(draws, index=None):
    """Split-chain potential scale reduction factor.

    ``draws`` is ``PosteriorDraws`` (with a parameter ``index``) or an
    array ``(chains, iters)``. Returns NaN when within-chain variance is
    zero.
    """
    x = _chains_array(draws, index)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("split_rhat needs >= 2 chains of >= 4 draws")
    s = _split(x)
    n = s.shape[1]
    W = s.var(axis=1, ddof=1).mean()
    if not W > 0:
        return math.nan
    B = n * s.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _autocov(x):
    # biased autocovariance of each row via FFT
    n = x.shape[1]
    f = np.fft.rfft(x - x.mean(axis=1, keepdims=True), n=2 * n, axis=1)
    ac = np.fft.irfft(f * np.conj(f), axis=1)[:, :n]
    return ac / n


def ess(draws, index=None):
    """Multi-chain effective sample size on split chains.

    Autocorrelations are combined across chains, summed in adjacent pairs,
    and truncated at the first negative pair sum. Capped at the total draw
    count; NaN when within-chain variance is zero.
    """
    x = _chains_array(draws, index)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] < 4:
        raise ValueError("ess needs >= 4 draws per chain")
    total = x.size
    s = _split(x)
    m, n = s.shape
    acov = _autocov(s)
    W = s.var(axis=1, ddof=1).mean()
    if not W > 0:
        return math.nan
    B = n * s.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B / n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(min(m * n / tau, total))
