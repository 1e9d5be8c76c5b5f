"""Comparator methods, out-of-sample metrics, and the benchmark and
annotation-downsampling experiments."""
import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.stats import rankdata

from .graph import laplacian
from .ingest import aggregate_counts, downsample_annotations, split_records
from .model import ModelData
from .posterior import p_any_flooded

log = logging.getLogger(__name__)

HEURISTICS = (
    "frac_pos_classified",
    "any_pos_classified",
    "count_pos_classified",
    "any_pos_annotation",
    "count_pos_annotation",
)
METRICS = ("pearson_frac_classified", "auc_any_annotated", "auc_any_classified")

LAPLACIAN_GRID = {"alpha": (0.05, 0.1, 0.2), "iters": (1, 5, 10, 50),
                  "init": ("frac_pos_classified", "count_pos_annotation")}
OLS_TARGETS = ("frac_pos_classified", "count_pos_annotation")


class BaselineError(ValueError):
    pass


@dataclass
class TractScore:
    tract_ids: tuple
    scores: np.ndarray
    method: str
    hyperparameters: dict = field(default_factory=dict)


def heuristic_score(train, kind):
    """Score tracts directly from training counts."""
    pos_cls = train.classified_positive.astype(np.float64)
    pos_ann = train.annotated_positive.astype(np.float64)
    tot = train.totals.astype(np.float64)
    if kind == "frac_pos_classified":
        s = np.divide(pos_cls, tot, out=np.zeros_like(pos_cls), where=tot > 0)
    elif kind == "any_pos_classified":
        s = (pos_cls > 0).astype(np.float64)
    elif kind == "count_pos_classified":
        s = pos_cls
    elif kind == "any_pos_annotation":
        s = (pos_ann > 0).astype(np.float64)
    elif kind == "count_pos_annotation":
        s = pos_ann
    else:
        raise BaselineError(f"unknown heuristic {kind!r}; choose from {HEURISTICS}")
    return TractScore(train.tract_ids, s, kind)


def ols_fit_predict(features, target, ridge=0.0):
    """Least squares with an unpenalised intercept; predicts every tract."""
    if ridge < 0:
        raise BaselineError("ridge must be non-negative")
    X = np.asarray(features.values, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    n, p = X.shape
    if p and n <= p:
        raise BaselineError(f"need more tracts than features (n={n}, p={p})")
    ym = y.mean()
    if p == 0:
        return TractScore(features.tract_ids, np.full(n, ym), "ols", {"ridge": ridge})
    xm = X.mean(axis=0)
    Xc = X - xm
    A = Xc.T @ Xc + ridge * np.eye(p)
    if ridge == 0 and np.linalg.matrix_rank(A) < p:
        raise BaselineError("normal equations are singular; use ridge > 0")
    coef = np.linalg.solve(A, Xc.T @ (y - ym))
    pred = ym + Xc @ coef
    return TractScore(features.tract_ids, pred, "ols", {"ridge": ridge, "coef": coef.tolist()})


def _lambda_max(L, iters=200, seed=0):
    """Largest Laplacian eigenvalue by power iteration."""
    n = L.shape[0]
    if n == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    lam = 0.0
    for _ in range(iters):
        w = L @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        lam = float(v @ w / (v @ v))
        v = w / nw
    return lam


def laplacian_smooth(x0, graph, alpha, iters):
    """Repeated diffusion ``x <- x - alpha L x``."""
    if iters < 0:
        raise BaselineError("iters must be non-negative")
    L = laplacian(graph, as_sparse=True)
    lam = _lambda_max(L)
    if lam > 0 and not 0 < alpha < 1.0 / lam:
        warnings.warn(f"alpha={alpha} outside (0, 1/lambda_max={1.0 / lam:.4g}); diffusion may "
                      "oscillate or diverge", RuntimeWarning, stacklevel=2)
    M = (sparse.identity(graph.n, format="csr") - alpha * L).tocsr()
    x = np.asarray(x0, dtype=np.float64).copy()
    for _ in range(iters):
        x = M @ x
    return TractScore(graph.tract_ids, x, "laplacian", {"alpha": alpha, "iters": iters})


def pearson(x, y):
    """Sample correlation; NaN when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise BaselineError("pearson needs two equal-length inputs of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        return math.nan
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def auc(scores, labels):
    """Mann-Whitney AUC; ties count one half. NaN with a single class."""
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels).astype(bool)
    n1 = int(lab.sum())
    n0 = lab.size - n1
    if n1 == 0 or n0 == 0:
        return math.nan
    ranks = rankdata(s, method="average")
    return float((ranks[lab].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


# -- evaluation -------------------------------------------------------------

def outcome_metrics(test, frac_score, any_score):
    """The three out-of-sample metrics over tracts with test images."""
    has = test.totals > 0
    frac = test.classified_positive[has] / test.totals[has]
    return {
        "pearson_frac_classified": pearson(np.asarray(frac_score)[has], frac),
        "auc_any_annotated": auc(np.asarray(any_score)[has], test.annotated_positive[has] > 0),
        "auc_any_classified": auc(np.asarray(any_score)[has], test.classified_positive[has] > 0),
    }


@dataclass
class BenchmarkReport:
    """Per method and metric: values across split seeds."""

    methods: list
    seeds: list
    values: dict = field(default_factory=dict)      # (method, metric) -> list per seed
    failures: list = field(default_factory=list)    # (method, seed, message)
    hyperparameters: dict = field(default_factory=dict)

    def add(self, method, metric, value):
        self.values.setdefault((method, metric), []).append(value)

    def series(self, method, metric):
        return np.array(self.values.get((method, metric), []), dtype=np.float64)

    def mean_sd(self, method, metric):
        v = self.series(method, metric)
        v = v[np.isfinite(v)]
        if v.size == 0:
            return math.nan, math.nan
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0

    @property
    def n_splits(self):
        return len(self.seeds)

    def rows(self):
        for m in self.methods:
            for k in METRICS:
                mean, sd = self.mean_sd(m, k)
                yield m, k, mean, sd, int(np.isfinite(self.series(m, k)).sum())

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "metric", "mean", "sd", "n_splits"])
            for m, k, mean, sd, cnt in self.rows():
                w.writerow([m, k, repr(mean), repr(sd), cnt])

    def format_table(self):
        head = f"{'Method':<24}" + "".join(f"{k:>28}" for k in METRICS)
        lines = [head, "-" * len(head)]
        for m in self.methods:
            cells = []
            for k in METRICS:
                mean, sd = self.mean_sd(m, k)
                cells.append(f"{mean:.2f} ± {sd:.2f}".rjust(28))
            lines.append(f"{m:<24}" + "".join(cells))
        lines.append(f"mean ± sd over {self.n_splits} random train/test splits")
        return "\n".join(lines)


def _fit_bayes(train_counts, graph, features, fit_config):
    from .sampler import hmc_run
    data = ModelData(train_counts, graph, features, fit_config.get("priors") or _default_priors())
    return hmc_run(data, fit_config["hmc"])


def _default_priors():
    from .model import Priors
    return Priors()


def _select(candidates, fit_val, val_table):
    """Best candidate per metric on the validation split."""
    best = {}
    for cand in candidates:
        s = fit_val(cand)
        met = outcome_metrics(val_table, s, s)
        for k, v in met.items():
            if np.isfinite(v) and (k not in best or v > best[k][0]):
                best[k] = (v, cand)
    return {k: c for k, (v, c) in best.items()}


def _train_target(table, name):
    return heuristic_score(table, name).scores


def run_benchmark(records, features, graph, split_seeds, methods=None, fit_config=None,
                  train_fraction=0.3, validation_fraction=0.5):
    """Repeated random splits; fit each method on train, score on test.

    ``records`` must be assigned to tracts. ``fit_config`` is a dict with
    ``"hmc"`` (``HmcConfig``) and optional ``"priors"``; the Bayesian
    model's chain seeds are offset by the split seed.
    """
    from .sampler import HmcConfig

    split_seeds = list(split_seeds)
    if len(split_seeds) < 2:
        raise BaselineError("need at least two split seeds")
    methods = list(methods or [*HEURISTICS, "ols", "laplacian", "bayes"])
    fit_config = dict(fit_config or {})
    base_hmc = fit_config.get("hmc") or HmcConfig()
    ids = graph.tract_ids
    report = BenchmarkReport(methods, split_seeds)
    if "ols" in methods and (features is None or features.p == 0):
        raise BaselineError("OLS baseline requested but no features were provided")

    for seed in split_seeds:
        tr_rec, te_rec = split_records(records, train_fraction, seed)
        train = aggregate_counts(tr_rec, ids)
        test = aggregate_counts(te_rec, ids)
        fit_rec, val_rec = split_records(tr_rec, 1.0 - validation_fraction, seed + 7919)
        fit_tab = aggregate_counts(fit_rec, ids)
        val_tab = aggregate_counts(val_rec, ids)
        for m in methods:
            try:
                if m in HEURISTICS:
                    s = heuristic_score(train, m).scores
                    met = outcome_metrics(test, s, s)
                elif m == "ols":
                    choice = _select(OLS_TARGETS,
                                     lambda t: ols_fit_predict(features, _train_target(fit_tab, t)).scores,
                                     val_tab)
                    met = {}
                    for k in METRICS:
                        t = choice.get(k, OLS_TARGETS[0])
                        s = ols_fit_predict(features, _train_target(train, t)).scores
                        met[k] = outcome_metrics(test, s, s)[k]
                    report.hyperparameters.setdefault(m, []).append(choice)
                elif m == "laplacian":
                    grid = list(itertools.product(*LAPLACIAN_GRID.values()))
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        choice = _select(grid, lambda c: laplacian_smooth(
                            _train_target(fit_tab, c[2]), graph, c[0], c[1]).scores, val_tab)
                        met = {}
                        for k in METRICS:
                            a, it, init = choice.get(k, grid[0])
                            s = laplacian_smooth(_train_target(train, init), graph, a, it).scores
                            met[k] = outcome_metrics(test, s, s)[k]
                    report.hyperparameters.setdefault(m, []).append(choice)
                elif m == "bayes":
                    cfg = HmcConfig(**{**base_hmc.__dict__,
                                       "master_seed": base_hmc.master_seed + 1000 * seed})
                    draws = _fit_bayes(train, graph, features, {**fit_config, "hmc": cfg})
                    r_mean = draws.risk.reshape(-1, graph.n).mean(axis=0)
                    pany = p_any_flooded(draws, test.totals)
                    met = outcome_metrics(test, r_mean, pany)
                    met["pearson_frac_classified"] = outcome_metrics(test, r_mean, r_mean)[
                        "pearson_frac_classified"]
                else:
                    raise BaselineError(f"unknown method {m!r}")
            except Exception as exc:  # recorded, excluded from aggregates
                log.warning("method %s failed on seed %s: %s", m, seed, exc)
                report.failures.append((m, seed, str(exc)))
                met = {k: math.nan for k in METRICS}
            for k in METRICS:
                report.add(m, k, met[k])
    return report


def downsampling_experiment(table, features, graph, factors, fit_config, seed):
    """Refit with annotations thinned by each factor; correlate posterior
    mean risks with the full-annotation fit.

    ``table`` is a ``CountTable`` (or assigned records, which are
    aggregated). Returns ``{factor: pearson}``.
    """
    from .sampler import hmc_run

    if not hasattr(table, "counts"):
        table = aggregate_counts(table, graph.tract_ids)
    factors = [int(f) for f in factors]
    if any(f < 1 for f in factors):
        raise BaselineError("factors must be >= 1")
    priors = fit_config.get("priors") or _default_priors()
    hmc = fit_config["hmc"]
    full = hmc_run(ModelData(table, graph, features, priors), hmc)
    ref = full.risk.reshape(-1, graph.n).mean(axis=0)
    out = {}
    for f in factors:
        thin = downsample_annotations(table, f, seed + f)
        dr = hmc_run(ModelData(thin, graph, features, priors), hmc)
        out[f] = pearson(dr.risk.reshape(-1, graph.n).mean(axis=0), ref)
    return out
