"""Posterior summaries of tract risk and the high-risk classification."""
import csv
from dataclasses import dataclass

import numpy as np

from .ingest import CountTable


class PosteriorError(ValueError):
    pass


@dataclass(frozen=True)
class RiskSummary:
    tract_ids: tuple
    mean: np.ndarray
    sd: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    p_any: np.ndarray
    totals: np.ndarray
    level: float

    def by_tract(self):
        return {t: i for i, t in enumerate(self.tract_ids)}

    def write_csv(self, path, header_comment=None, high_risk=None):
        flags = set(high_risk.members) if high_risk is not None else None
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            cols = ["tract_id", "risk_mean", "risk_sd", "risk_lo", "risk_hi", "p_any", "n_images"]
            w.writerow(cols + (["high_risk"] if flags is not None else []))
            for i, t in enumerate(self.tract_ids):
                row = [t, repr(float(self.mean[i])), repr(float(self.sd[i])), repr(float(self.lo[i])),
                       repr(float(self.hi[i])), repr(float(self.p_any[i])), int(self.totals[i])]
                if flags is not None:
                    row.append(int(t in flags))
                w.writerow(row)

    def properties(self, high_risk=None):
        """Per-tract GeoJSON properties."""
        flags = set(high_risk.members) if high_risk is not None else set()
        return {
            t: {"risk_mean": float(self.mean[i]), "risk_lo": float(self.lo[i]),
                "risk_hi": float(self.hi[i]), "p_any": float(self.p_any[i]),
                "high_risk": t in flags}
            for i, t in enumerate(self.tract_ids)
        }


def read_summary_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    return RiskSummary(tuple(r["tract_id"] for r in rows), col("risk_mean"), col("risk_sd"),
                       col("risk_lo"), col("risk_hi"), col("p_any"),
                       np.array([int(r["n_images"]) for r in rows]), float("nan"))


def _risk_draws(draws):
    r = draws.risk if hasattr(draws, "risk") else np.asarray(draws, dtype=np.float64)
    return r.reshape(-1, r.shape[-1])


def p_any_flooded(draws, counts):
    """Posterior mean of ``1 - (1 - r_c)^N_c`` per tract.

    ``counts`` is a ``CountTable`` or an array of per-tract image totals.
    """
    R = _risk_draws(draws)
    N = counts.totals if isinstance(counts, CountTable) else np.asarray(counts)
    N = N.astype(np.float64)
    if N.shape != (R.shape[1],):
        raise PosteriorError("image totals do not match the number of tracts")
    with np.errstate(divide="ignore", invalid="ignore"):
        v = -np.expm1(N * np.log1p(-R))
    return np.where(N > 0, np.nan_to_num(v, nan=1.0), 0.0).mean(axis=0)


def summarize(draws, level=0.95, counts=None):
    """Mean, sd, central interval (linear-interpolation quantiles) and
    any-flooded probability per tract, pooled over chains."""
    if not 0 < level < 1:
        raise PosteriorError("level must be in (0, 1)")
    R = _risk_draws(draws)
    if R.shape[0] == 0:
        raise PosteriorError("no draws")
    if counts is None:
        counts = draws.data.counts
    tract_ids = counts.tract_ids if isinstance(counts, CountTable) else tuple(range(R.shape[1]))
    totals = counts.totals if isinstance(counts, CountTable) else np.asarray(counts)
    q = (1.0 - level) / 2.0
    lo, hi = np.quantile(R, [q, 1.0 - q], axis=0, method="linear")
    return RiskSummary(tuple(tract_ids), R.mean(axis=0), R.std(axis=0), lo, hi,
                       p_any_flooded(R, totals), np.asarray(totals), level)


@dataclass(frozen=True)
class HighRiskSet:
    confirmed: frozenset
    threshold: float
    members: frozenset


def confirmed_tracts(counts):
    """Tracts with at least one image annotated positive."""
    return {t for t, k in zip(counts.tract_ids, counts.annotated_positive) if k > 0}


def high_risk(summary, confirmed, percentile=25.0):
    """Confirmed tracts plus tracts whose posterior-mean risk exceeds the
    ``percentile``-th percentile of risk among confirmed tracts."""
    confirmed = set(confirmed)
    if not confirmed:
        raise PosteriorError("confirmed set is empty; threshold undefined")
    idx = summary.by_tract()
    missing = confirmed - set(idx)
    if missing:
        raise PosteriorError(f"confirmed tracts not in summary: {sorted(missing)[:5]}")
    t = float(np.percentile(summary.mean[[idx[c] for c in confirmed]], percentile, method="linear"))
    members = confirmed | {tid for tid, m in zip(summary.tract_ids, summary.mean) if m > t}
    return HighRiskSet(frozenset(confirmed), t, frozenset(members))
