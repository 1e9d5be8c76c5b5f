"""Image records to per-tract count tables; annotation sampling,
feature preprocessing, and train/test splitting."""
import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BOUNDARY, OUTSIDE

log = logging.getLogger(__name__)

UNKNOWN = -1
COLUMNS = ("n10", "n11", "n1q", "n00", "n01", "n0q")
# column position for (yhat, y)
CELL = {(1, 0): 0, (1, 1): 1, (1, UNKNOWN): 2, (0, 0): 3, (0, 1): 4, (0, UNKNOWN): 5}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    x: float
    y: float
    yhat: int
    label: int = UNKNOWN  # annotation: 0, 1, or UNKNOWN
    timestamp: str = None
    tract_id: str = None


class RecordSet:
    """Column-oriented collection of image records.

    ``label`` uses ``UNKNOWN`` (-1) for unannotated images; ``tract`` is
    ``None`` until assignment.
    """

    def __init__(self, image_id, x, y, yhat, label=None, tract=None, timestamp=None):
        self.image_id = np.asarray(image_id, dtype=object)
        n = self.image_id.size
        self.x = np.asarray(x, dtype=np.float64).reshape(n)
        self.y = np.asarray(y, dtype=np.float64).reshape(n)
        self.yhat = np.asarray(yhat, dtype=np.int8).reshape(n)
        self.label = (np.full(n, UNKNOWN, dtype=np.int8) if label is None
                      else np.asarray(label, dtype=np.int8).reshape(n))
        self.tract = None if tract is None else np.asarray(tract, dtype=object).reshape(n)
        self.timestamp = None if timestamp is None else np.asarray(timestamp, dtype=object).reshape(n)
        if not np.isin(self.yhat, (0, 1)).all():
            raise IngestError("classifier labels must be 0 or 1")
        if not np.isin(self.label, (0, 1, UNKNOWN)).all():
            raise IngestError("annotations must be 0, 1 or unknown")

    def __len__(self):
        return self.image_id.size

    def __iter__(self):
        for i in range(len(self)):
            yield ImageRecord(
                str(self.image_id[i]), float(self.x[i]), float(self.y[i]), int(self.yhat[i]),
                int(self.label[i]),
                None if self.timestamp is None else self.timestamp[i],
                None if self.tract is None else self.tract[i],
            )

    @classmethod
    def from_records(cls, records):
        records = list(records)
        has_tract = any(r.tract_id is not None for r in records)
        return cls(
            [r.image_id for r in records], [r.x for r in records], [r.y for r in records],
            [r.yhat for r in records], [r.label for r in records],
            [r.tract_id for r in records] if has_tract else None,
        )

    def take(self, idx):
        idx = np.asarray(idx)
        return RecordSet(
            self.image_id[idx], self.x[idx], self.y[idx], self.yhat[idx], self.label[idx],
            None if self.tract is None else self.tract[idx],
            None if self.timestamp is None else self.timestamp[idx],
        )

    def with_labels(self, label):
        out = self.take(np.arange(len(self)))
        out.label = np.asarray(label, dtype=np.int8).copy()
        return out


@dataclass(frozen=True)
class CountTable:
    """Six-cell counts per tract; columns follow ``COLUMNS``."""

    tract_ids: tuple
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64).reshape(-1, 6)
        if c.shape[0] != len(self.tract_ids):
            raise IngestError("count rows do not match tract ids")
        if (c < 0).any():
            raise IngestError("negative counts")
        object.__setattr__(self, "tract_ids", tuple(str(t) for t in self.tract_ids))
        object.__setattr__(self, "counts", c)

    @property
    def totals(self):
        return self.counts.sum(axis=1)

    def cell(self, yhat, label):
        return self.counts[:, CELL[(yhat, label)]]

    @property
    def classified_positive(self):
        return self.counts[:, 0:3].sum(axis=1)

    @property
    def annotated_positive(self):
        return self.counts[:, 1] + self.counts[:, 4]

    def reorder(self, tract_ids):
        pos = {t: i for i, t in enumerate(self.tract_ids)}
        missing = [t for t in tract_ids if t not in pos]
        if missing:
            raise IngestError(f"tracts missing from count table: {missing[:5]}")
        return CountTable(tuple(tract_ids), self.counts[[pos[t] for t in tract_ids]])

    def __add__(self, other):
        if self.tract_ids != other.tract_ids:
            raise IngestError("count tables cover different tracts")
        return CountTable(self.tract_ids, self.counts + other.counts)


@dataclass
class DropReport:
    n_input: int = 0
    n_assigned: int = 0
    outside: list = field(default_factory=list)
    boundary_ambiguous: list = field(default_factory=list)
    rejected: list = field(default_factory=list)

    @property
    def drop_count(self):
        return len(self.outside) + len(self.rejected)

    def to_dict(self):
        return {"n_input": self.n_input, "n_assigned": self.n_assigned,
                "n_outside": len(self.outside), "n_rejected": len(self.rejected),
                "n_boundary_ambiguous": len(self.boundary_ambiguous),
                "rejected_ids": list(self.rejected)}


def assign_images_to_tracts(records, polygons):
    """Spatial join by point-in-polygon.

    Returns ``(assigned RecordSet, DropReport)``. Points on a boundary go to
    the first polygon (input order) that touches them and are listed as
    boundary-ambiguous; points outside every polygon, and records with
    non-finite coordinates, are dropped.
    """
    if not isinstance(records, RecordSet):
        records = RecordSet.from_records(records)
    report = DropReport(n_input=len(records))
    finite = np.isfinite(records.x) & np.isfinite(records.y)
    report.rejected = [str(i) for i in records.image_id[~finite]]

    n = len(records)
    owner = np.full(n, -1, dtype=np.int64)
    boundary = np.zeros(n, dtype=bool)
    x, y = records.x, records.y
    for k, poly in enumerate(polygons):
        x0, y0, x1, y1 = poly.bbox
        cand = np.flatnonzero(finite & (owner < 0) & (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1))
        if cand.size == 0:
            continue
        code = poly.classify(x[cand], y[cand])
        hit = code != OUTSIDE
        owner[cand[hit]] = k
        boundary[cand[code == BOUNDARY]] = True

    keep = owner >= 0
    report.outside = [str(i) for i in records.image_id[finite & ~keep]]
    report.boundary_ambiguous = [str(i) for i in records.image_id[keep & boundary]]
    report.n_assigned = int(keep.sum())
    out = records.take(np.flatnonzero(keep))
    ids = np.array([p.tract_id for p in polygons], dtype=object)
    out.tract = ids[owner[keep]] if keep.any() else np.zeros(0, dtype=object)
    if report.drop_count:
        log.info("dropped %d records (%d outside, %d rejected)", report.drop_count,
                 len(report.outside), len(report.rejected))
    return out, report


def aggregate_counts(records, tract_ids):
    """Cross-tabulate assigned records into a ``CountTable`` over ``tract_ids``."""
    tract_ids = tuple(str(t) for t in tract_ids)
    counts = np.zeros((len(tract_ids), 6), dtype=np.int64)
    if len(records) == 0:
        return CountTable(tract_ids, counts)
    if records.tract is None:
        raise IngestError("records have not been assigned to tracts")
    pos = {t: i for i, t in enumerate(tract_ids)}
    try:
        rows = np.array([pos[t] for t in records.tract], dtype=np.int64)
    except KeyError as exc:
        raise IngestError(f"record tract {exc.args[0]!r} not in tract list") from None
    lab = records.label.astype(np.int64)
    col = np.where(records.yhat == 1, 0, 3) + np.where(lab == UNKNOWN, 2, lab)
    np.add.at(counts, (rows, col), 1)
    return CountTable(tract_ids, counts)


def select_annotation_sample(records, n_pos, n_neg, seed):
    """Uniformly sample ``n_pos`` classifier-positive and ``n_neg``
    classifier-negative image ids without replacement.

    Input order does not matter: candidates are sorted by id first.
    """
    rng = np.random.default_rng(seed)
    chosen = set()
    for label, want in ((1, n_pos), (0, n_neg)):
        ids = np.sort(records.image_id[records.yhat == label].astype(str))
        if want > ids.size:
            log.warning("requested %d classifier-%d images, only %d available", want, label, ids.size)
            want = ids.size
        if want > 0:
            chosen.update(rng.choice(ids, size=want, replace=False).tolist())
    return chosen


def annotate(records, ids, true_labels):
    """Reveal ``true_labels`` for the images in ``ids``; others unknown."""
    mask = np.isin(records.image_id.astype(str), np.array(sorted(ids), dtype=str))
    label = np.where(mask, np.asarray(true_labels, dtype=np.int8), UNKNOWN)
    return records.with_labels(label)


# -- features ---------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMatrix:
    """Preprocessed per-tract covariates with their transformation record."""

    tract_ids: tuple
    values: np.ndarray
    names: tuple
    log_transformed: tuple
    means: tuple
    sds: tuple

    @property
    def p(self):
        return self.values.shape[1]

    def metadata(self):
        return {"columns": [
            {"name": n, "log_transformed": bool(l), "mean": m, "sd": s}
            for n, l, m, s in zip(self.names, self.log_transformed, self.means, self.sds)
        ]}

    def reorder(self, tract_ids):
        pos = {t: i for i, t in enumerate(self.tract_ids)}
        missing = [t for t in tract_ids if t not in pos]
        if missing:
            raise IngestError(f"tracts missing from features: {missing[:5]}")
        return FeatureMatrix(tuple(tract_ids), self.values[[pos[t] for t in tract_ids]],
                             self.names, self.log_transformed, self.means, self.sds)

    @classmethod
    def empty(cls, tract_ids):
        return cls(tuple(tract_ids), np.zeros((len(tract_ids), 0)), (), (), (), ())


def sample_skewness(x):
    """Adjusted Fisher-Pearson standardized moment coefficient G1."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 3:
        return 0.0
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0
    g1 = np.mean(d ** 3) / m2 ** 1.5
    return float(g1 * math.sqrt(n * (n - 1)) / (n - 2))


def preprocess_features(raw, tract_ids, names=None, skew_threshold=1.0):
    """log1p right-skewed columns, then z-score every column (ddof=1)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[:, None]
    n, p = raw.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    if len(tract_ids) != n:
        raise IngestError("feature rows do not match tract ids")
    if not np.all(np.isfinite(raw)):
        raise IngestError("features contain missing or non-finite values")
    out = np.empty_like(raw)
    logged, means, sds = [], [], []
    for j in range(p):
        col = raw[:, j]
        take_log = sample_skewness(col) > skew_threshold
        if take_log:
            if (col < 0).any():
                raise IngestError(f"column {names[j]!r} is right-skewed but has negative values; "
                                  "cannot log-transform")
            col = np.log1p(col)
        sd = col.std(ddof=1) if n > 1 else 0.0
        if not sd > 0:
            raise IngestError(f"column {names[j]!r} has zero variance")
        m = col.mean()
        z = (col - m) / sd
        # second pass removes the rounding residue of the first
        z = (z - z.mean()) / z.std(ddof=1)
        out[:, j] = z
        logged.append(take_log)
        means.append(float(m))
        sds.append(float(sd))
    return FeatureMatrix(tuple(str(t) for t in tract_ids), out, names, tuple(logged),
                         tuple(means), tuple(sds))


# -- splitting and downsampling --------------------------------------------

def split_records(records, train_fraction, seed, stratified=False):
    """Image-level random split; returns ``(train, test)`` RecordSets."""
    if not 0 < train_fraction < 1:
        raise IngestError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    # canonical order so the split does not depend on input order
    order = np.argsort(records.image_id.astype(str), kind="stable")
    if stratified:
        train = []
        tracts = records.tract[order]
        for t in sorted(set(tracts)):
            idx = order[tracts == t]
            k = int(round(train_fraction * idx.size))
            train.extend(rng.permutation(idx)[:k].tolist())
        mask = np.zeros(len(records), dtype=bool)
        mask[train] = True
    else:
        k = int(round(train_fraction * len(records)))
        mask = np.zeros(len(records), dtype=bool)
        mask[rng.permutation(order)[:k]] = True
    return records.take(np.flatnonzero(mask)), records.take(np.flatnonzero(~mask))


def split_train_test(records, train_fraction, seed, tract_ids, stratified=False):
    """Split records and aggregate both halves over the same tract set."""
    tr, te = split_records(records, train_fraction, seed, stratified)
    return aggregate_counts(tr, tract_ids), aggregate_counts(te, tract_ids)


def downsample_annotations(table, factor, seed):
    """Keep a random ``1/factor`` of annotations within each classifier stratum.

    Dropped annotations move to the unknown cell with the same classifier
    label. Stratum sizes are floored, but a nonempty stratum keeps at least
    one annotation.
    """
    if factor < 1 or int(factor) != factor:
        raise IngestError("factor must be an integer >= 1")
    if factor == 1:
        return CountTable(table.tract_ids, table.counts.copy())
    rng = np.random.default_rng(seed)
    counts = table.counts.copy()
    # (annotated columns, unknown column) per classifier label
    for cols, unk in (((0, 1), 2), ((3, 4), 5)):
        units = []  # (tract, column) per annotated image
        for c in cols:
            rows = np.repeat(np.arange(counts.shape[0]), table.counts[:, c])
            units.append(np.column_stack([rows, np.full(rows.size, c)]))
        units = np.vstack(units)
        size = units.shape[0]
        if size == 0:
            continue
        keep = max(1, size // int(factor))
        drop = units[rng.permutation(size)[keep:]]
        np.subtract.at(counts, (drop[:, 0], drop[:, 1]), 1)
        np.add.at(counts, (drop[:, 0], np.full(drop.shape[0], unk)), 1)
    return CountTable(table.tract_ids, counts)


# -- file formats -----------------------------------------------------------

def _parse_label(v):
    if v is None or v == "" or (isinstance(v, str) and v.lower() in ("null", "none", "nan", "?")):
        return UNKNOWN
    return int(float(v))


def read_records(path):
    """Read image records from JSONL (``.jsonl``/``.ndjson``/``.json``) or CSV.

    Keys: ``image_id, x, y, yhat, label`` with ``label`` 0/1/null
    (``annotation`` is accepted as an alias). Optional ``tract_id``.
    """
    rows = []
    with open(path, newline="") as fh:
        if str(path).endswith((".jsonl", ".json", ".ndjson")):
            for k, line in enumerate(fh):
                if line.strip():
                    try:
                        rows.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise IngestError(f"{path}:{k + 1}: {exc}") from None
        else:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    try:
        return RecordSet(
            [str(r["image_id"]) for r in rows],
            [float(r["x"]) for r in rows], [float(r["y"]) for r in rows],
            [int(float(r["yhat"])) for r in rows],
            [_parse_label(r.get("label", r.get("annotation"))) for r in rows],
            [r["tract_id"] for r in rows] if rows and "tract_id" in rows[0] else None,
        )
    except KeyError as exc:
        raise IngestError(f"{path}: missing key {exc.args[0]!r}") from None


def _record_rows(records):
    for i in range(len(records)):
        row = {"image_id": str(records.image_id[i]), "x": float(records.x[i]),
               "y": float(records.y[i]), "yhat": int(records.yhat[i]),
               "label": None if records.label[i] == UNKNOWN else int(records.label[i])}
        if records.tract is not None:
            row["tract_id"] = str(records.tract[i])
        yield row


def write_records(records, path):
    """Write records as JSONL, or CSV when ``path`` ends in ``.csv``."""
    with open(path, "w", newline="") as fh:
        if str(path).endswith(".csv"):
            fields = ["image_id", "x", "y", "yhat", "label"]
            if records.tract is not None:
                fields.append("tract_id")
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for row in _record_rows(records):
                row["x"], row["y"] = repr(row["x"]), repr(row["y"])
                row["label"] = "" if row["label"] is None else row["label"]
                w.writerow(row)
        else:
            for row in _record_rows(records):
                fh.write(json.dumps(row) + "\n")


def write_counts_csv(table, path, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tract_id", *COLUMNS, "total"])
        for t, row, tot in zip(table.tract_ids, table.counts, table.totals):
            w.writerow([t, *row.tolist(), int(tot)])


def read_counts_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    counts = np.array([[int(r[c]) for c in COLUMNS] for r in rows], dtype=np.int64).reshape(-1, 6)
    table = CountTable(tuple(r["tract_id"] for r in rows), counts)
    totals = np.array([int(r["total"]) for r in rows], dtype=np.int64)
    if not np.array_equal(totals, table.totals):
        raise IngestError(f"{path}: total column does not equal the six-cell sum")
    return table


def read_raw_features(path):
    """CSV with a ``tract_id`` column plus numeric covariates.

    Returns ``(tract_ids, names, values)``.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        names = [c for c in reader.fieldnames if c != "tract_id"]
        rows = list(reader)
    ids = tuple(r["tract_id"] for r in rows)
    try:
        vals = np.array([[float(r[c]) for c in names] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None
    return ids, tuple(names), vals.reshape(len(rows), len(names))


def write_features(fm, path, header_comment=None):
    """CSV of preprocessed values plus a ``.json`` sidecar of the transforms."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tract_id", *fm.names])
        for t, row in zip(fm.tract_ids, fm.values):
            w.writerow([t, *(repr(float(v)) for v in row)])
    with open(str(path) + ".json", "w") as fh:
        json.dump(fm.metadata(), fh, indent=2, sort_keys=True)


def read_features(path):
    """Inverse of ``write_features``."""
    ids, names, vals = read_raw_features(path)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)["columns"]
    return FeatureMatrix(ids, vals, names, tuple(c["log_transformed"] for c in meta),
                         tuple(c["mean"] for c in meta), tuple(c["sd"] for c in meta))
