"""Decision analyses on posterior risk: coverage gaps, a risk-adjusted
reporting audit, and greedy sensor placement."""
import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import k_hop_neighborhood

INDICATORS = ("has_311_report", "has_sensor", "has_stormwater_prediction")
Z95 = 1.959963984540054


class AppError(ValueError):
    pass


# -- gap analysis -----------------------------------------------------------

@dataclass
class IndicatorTable:
    """External flood signals, population and optional demographics per tract."""

    tract_ids: tuple
    indicators: np.ndarray            # (n, 3) int8, columns as INDICATORS
    population: np.ndarray            # (n,) int64
    demographics: dict = field(default_factory=dict)  # name -> (n,) float

    def __post_init__(self):
        self.tract_ids = tuple(self.tract_ids)
        n = len(self.tract_ids)
        if len(set(self.tract_ids)) != n:
            raise AppError("duplicate tract ids in indicator table")
        self.indicators = np.asarray(self.indicators, dtype=np.int8).reshape(n, len(INDICATORS))
        if not np.isin(self.indicators, (0, 1)).all():
            raise AppError("indicator values must be 0 or 1")
        self.population = np.asarray(self.population, dtype=np.int64).reshape(n)
        if (self.population < 0).any():
            raise AppError("population must be non-negative")
        self.demographics = {k: np.asarray(v, dtype=np.float64).reshape(n)
                             for k, v in self.demographics.items()}

    def index(self):
        return {t: i for i, t in enumerate(self.tract_ids)}

    @classmethod
    def read_csv(cls, path):
        """CSV keyed by ``tract_id`` with the three indicator columns,
        ``population`` and any further numeric demographic columns."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        if not rows:
            raise AppError(f"{path}: no rows")
        need = {"tract_id", "population", *INDICATORS}
        missing = need - set(rows[0])
        if missing:
            raise AppError(f"{path}: missing columns {sorted(missing)}")
        extra = [k for k in rows[0] if k not in need]
        try:
            ind = [[int(r[k]) for k in INDICATORS] for r in rows]
            pop = [int(r["population"]) for r in rows]
            dem = {k: [float(r[k]) for r in rows] for k in extra}
        except ValueError as exc:
            raise AppError(f"{path}: {exc}") from None
        return cls([r["tract_id"] for r in rows], ind, pop, dem)


@dataclass
class GapReport:
    lacking: dict           # indicator -> sorted list of tract ids
    population: dict        # indicator -> population sum
    lacking_all: list
    population_all: int

    def to_dict(self):
        return {"lacking": self.lacking, "population": self.population,
                "lacking_all": self.lacking_all, "population_all": self.population_all}


def gap_analysis(high_risk, indicators):
    """High-risk tracts missing each external signal, and missing all."""
    members = high_risk.members if hasattr(high_risk, "members") else high_risk
    idx = indicators.index()
    missing = sorted(set(members) - set(idx))
    if missing:
        raise AppError(f"high-risk tracts absent from indicator table: {missing}")
    hr = sorted(members)
    rows = np.array([idx[t] for t in hr], dtype=np.int64)
    ind = indicators.indicators[rows] if rows.size else np.zeros((0, len(INDICATORS)), np.int8)
    pop = indicators.population[rows] if rows.size else np.zeros(0, np.int64)
    lacking, popsum = {}, {}
    for j, name in enumerate(INDICATORS):
        sel = ind[:, j] == 0
        lacking[name] = [t for t, s in zip(hr, sel) if s]
        popsum[name] = int(pop[sel].sum())
    none = (ind == 0).all(axis=1)
    return GapReport(lacking, popsum, [t for t, s in zip(hr, none) if s], int(pop[none].sum()))


# -- audit ------------------------------------------------------------------

@dataclass
class LogisticFit:
    coef: np.ndarray
    se: np.ndarray
    iterations: int
    separated: bool


def _zscore(x, name):
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    if not np.isfinite(x).all():
        raise AppError(f"demographic {name!r} has non-finite values")
    if sd == 0:
        raise AppError(f"demographic {name!r} has zero variance and cannot be z-scored")
    return (x - x.mean()) / sd


def logistic_irls(X, y, tol=1e-8, max_iter=100):
    """Newton/IRLS for logistic regression with Wald standard errors.

    Stops when the score norm is below ``tol``. Failure to converge, or
    fitted probabilities saturating at 0 or 1, marks separation.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    b = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        eta = X @ b
        mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
        g = X.T @ (y - mu)
        w = mu * (1.0 - mu)
        H = X.T @ (X * w[:, None])
        if np.linalg.norm(g) < tol:
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return LogisticFit(b, np.full_like(b, np.nan), it, True)
        # step halving keeps the log-likelihood ascending
        ll = _loglik(eta, y)
        t = 1.0
        while t > 1e-10 and _loglik(X @ (b + t * step), y) < ll - 1e-12:
            t *= 0.5
        b = b + t * step
    else:
        return LogisticFit(b, np.full_like(b, np.nan), max_iter, True)
    if np.abs(X @ b).max() > 30:  # mu within 1e-13 of a boundary
        return LogisticFit(b, np.full_like(b, np.nan), it, True)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return LogisticFit(b, np.full_like(b, np.nan), it, True)
    se = np.sqrt(np.diag(cov))
    return LogisticFit(b, se, it, not np.isfinite(se).all())


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass
class AuditRow:
    feature: str
    coef: float
    se: float
    gamma: float
    beta_risk: float
    separated: bool

    @property
    def lo(self):
        return self.coef - Z95 * self.se

    @property
    def hi(self):
        return self.coef + Z95 * self.se

    def excludes_zero(self):
        return bool(self.lo > 0 or self.hi < 0)


@dataclass
class AuditResult:
    rows: list
    mode: str

    def __getitem__(self, name):
        for r in self.rows:
            if r.feature == name:
                return r
        raise KeyError(name)

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "coefficient", "se", "lo", "hi", "gamma", "beta_risk",
                        "separated"])
            for r in self.rows:
                if r.separated:
                    w.writerow([r.feature, "", "", "", "", "", "", 1])
                else:
                    w.writerow([r.feature, repr(r.coef), repr(r.se), repr(r.lo), repr(r.hi),
                                repr(r.gamma), repr(r.beta_risk), 0])


def risk_adjusted_audit(risk, outcome, demographics, joint=False):
    """Logistic regression of reporting on risk plus demographics.

    ``demographics`` maps column name to per-tract values; each column is
    z-scored here. By default one regression per column; ``joint=True``
    fits all columns together.
    """
    r = np.asarray(risk, dtype=np.float64)
    y = np.asarray(outcome)
    if r.ndim != 1 or y.shape != r.shape:
        raise AppError("risk and outcome must be equal-length vectors")
    if not np.isin(y, (0, 1)).all():
        raise AppError("outcome must be binary")
    if y.min() == y.max():
        raise AppError("outcome has a single class; regression undefined")
    if not demographics:
        raise AppError("no demographic columns given")
    Z = {k: _zscore(v, k) for k, v in demographics.items()}
    for k, v in Z.items():
        if v.shape != r.shape:
            raise AppError(f"demographic {k!r} length does not match risk")
    one = np.ones_like(r)
    rows = []
    if joint:
        names = list(Z)
        fit = logistic_irls(np.column_stack([one, r, *[Z[k] for k in names]]), y)
        for j, k in enumerate(names):
            rows.append(AuditRow(k, float(fit.coef[2 + j]), float(fit.se[2 + j]),
                                 float(fit.coef[0]), float(fit.coef[1]), fit.separated))
    else:
        for k, d in Z.items():
            fit = logistic_irls(np.column_stack([one, r, d]), y)
            rows.append(AuditRow(k, float(fit.coef[2]), float(fit.se[2]), float(fit.coef[0]),
                                 float(fit.coef[1]), fit.separated))
    for row in rows:
        if row.separated:
            warnings.warn(f"separation in audit regression for {row.feature!r}; no estimate",
                          RuntimeWarning, stacklevel=2)
    return AuditResult(rows, "joint" if joint else "separate")


# -- placement --------------------------------------------------------------

@dataclass
class PlacementResult:
    chosen: list
    gains: list
    objective_before: float
    objective_after: float
    k: int

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "tract_id", "gain", "objective"])
            obj = self.objective_before
            for i, (t, g) in enumerate(zip(self.chosen, self.gains), 1):
                obj += g
                w.writerow([i, t, repr(g), repr(obj)])

    def write_geojson(self, path, polygons, meta=None):
        from .graph import polygons_to_geojson
        by_id = {p.tract_id: p for p in polygons}
        missing = [t for t in self.chosen if t not in by_id]
        if missing:
            raise AppError(f"no polygon for chosen tracts {missing}")
        props = {t: {"step": i, "gain": g}
                 for i, (t, g) in enumerate(zip(self.chosen, self.gains), 1)}
        doc = polygons_to_geojson([by_id[t] for t in self.chosen], props)
        if meta:
            doc["metadata"] = meta
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _risk_vector(risk, graph):
    if isinstance(risk, dict):
        missing = [t for t in graph.tract_ids if t not in risk]
        if missing:
            raise AppError(f"risk missing for tracts {missing[:5]}")
        return np.array([risk[t] for t in graph.tract_ids], dtype=np.float64)
    r = np.asarray(risk, dtype=np.float64)
    if r.shape != (graph.n,):
        raise AppError("risk length does not match graph")
    return r


def _check_sets(graph, *sets):
    idx = graph.index
    for s in sets:
        bad = sorted(set(s) - set(idx))
        if bad:
            raise AppError(f"tracts not in graph: {bad[:5]}")


def coverage_objective(placement, risk, graph, existing, k):
    """Total risk within ``k`` hops of any sensor."""
    _check_sets(graph, placement, existing)
    r = _risk_vector(risk, graph)
    seeds = set(existing) | set(placement)
    if not seeds:
        return 0.0
    cov = k_hop_neighborhood(graph, seeds, k)
    return float(sum(r[graph.index[t]] for t in cov))


def _coverage_masks(graph, k):
    """Boolean (n, n) matrix: row i marks tracts within k hops of tract i."""
    n = graph.n
    A = graph.adjacency().astype(bool).tolil()
    A.setdiag(True)
    A = A.tocsr()
    reach = np.eye(n, dtype=bool)
    for _ in range(k):
        nxt = (A @ reach.astype(np.int32)) > 0
        if (nxt == reach).all():
            break
        reach = nxt
    return reach


def greedy_placement(risk, graph, existing=(), U=25, k=1):
    """Add ``U`` sensors one at a time, each maximising newly covered risk.

    Candidates are all tracts without an existing sensor; ties go to the
    lexicographically smallest tract id.
    """
    if U < 1:
        raise AppError("U must be >= 1")
    if k < 0:
        raise AppError("k must be >= 0")
    _check_sets(graph, existing)
    r = _risk_vector(risk, graph)
    reach = _coverage_masks(graph, k)
    idx = graph.index
    covered = np.zeros(graph.n, dtype=bool)
    for t in existing:
        covered |= reach[idx[t]]
    before = float(r[covered].sum())
    cand = sorted(set(graph.tract_ids) - set(existing))
    if len(cand) < U:
        warnings.warn(f"only {len(cand)} candidate tracts for U={U}; placing all",
                      RuntimeWarning, stacklevel=2)
    chosen, gains = [], []
    for _ in range(min(U, len(cand))):
        best, best_gain = None, -math.inf
        for t in cand:           # sorted, so strict > keeps the smallest id on ties
            g = float(r[reach[idx[t]] & ~covered].sum())
            if g > best_gain:
                best, best_gain = t, g
        chosen.append(best)
        gains.append(best_gain)
        covered |= reach[idx[best]]
        cand.remove(best)
    return PlacementResult(chosen, gains, before, float(r[covered].sum()), k)


def brute_force_placement(risk, graph, existing=(), U=1, k=1, limit=10**6):
    """Exhaustive optimum over all ``U``-subsets of candidates.

    Returns ``(objective, chosen)``; ties go to the lexicographically
    smallest sorted subset.
    """
    if U < 1:
        raise AppError("U must be >= 1")
    _check_sets(graph, existing)
    r = _risk_vector(risk, graph)
    cand = sorted(set(graph.tract_ids) - set(existing))
    U = min(U, len(cand))
    if math.comb(len(cand), U) > limit:
        raise AppError(f"C({len(cand)}, {U}) subsets exceeds the limit of {limit}")
    reach = _coverage_masks(graph, k)
    idx = graph.index
    base = np.zeros(graph.n, dtype=bool)
    for t in existing:
        base |= reach[idx[t]]
    best, best_set = -math.inf, ()
    for combo in itertools.combinations(cand, U):
        cov = base.copy()
        for t in combo:
            cov |= reach[idx[t]]
        v = float(r[cov].sum())
        if v > best:
            best, best_set = v, combo
    return best, list(best_set)
