"""Synthetic cities with known parameters, for recovery and calibration
checks."""
from dataclasses import dataclass, field

import numpy as np

from .geometry import TractPolygon, random_points_in
from .graph import GraphError, TractGraph, laplacian
from .ingest import (FeatureMatrix, RecordSet, aggregate_counts, annotate,
                     preprocess_features, select_annotation_sample)
from .model import ModelParams


def make_grid_graph(rows, cols):
    """Rook-adjacency grid of unit squares.

    Returns ``(TractGraph, polygons)``; tract ``t{r}_{c}`` occupies
    ``[c, c+1] x [r, r+1]``.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    width = len(str(max(rows, cols) - 1))

    def tid(r, c):
        return f"t{r:0{width}d}_{c:0{width}d}"

    ids, polys, edges = [], [], []
    for r in range(rows):
        for c in range(cols):
            ids.append(tid(r, c))
            polys.append(TractPolygon(tid(r, c), [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1), (c, r)]))
            if c + 1 < cols:
                edges.append((tid(r, c), tid(r, c + 1)))
            if r + 1 < rows:
                edges.append((tid(r, c), tid(r + 1, c)))
    return TractGraph(ids, edges), polys


def sample_icar(graph, seed, per_component=True, size=None):
    """Exact draw from the intrinsic CAR prior on the sum-zero subspace.

    Eigendecomposes the Laplacian; each eigenvector with positive
    eigenvalue gets an independent normal coefficient of variance
    ``1 / eigenvalue``, the null space gets zero. With ``size`` set,
    returns a ``(size, n)`` array of independent draws.
    """
    if not per_component and len(set(graph.components.tolist())) > 1:
        raise GraphError("graph is disconnected; pass per_component=True")
    rng = np.random.default_rng(seed)
    lam, vec = np.linalg.eigh(laplacian(graph))
    pos = lam > 1e-9 * max(1.0, lam.max(initial=0.0))
    z = rng.standard_normal(graph.n if size is None else (size, graph.n))
    coef = np.where(pos, z / np.sqrt(np.where(pos, lam, 1.0)), 0.0)
    phi = np.atleast_2d(coef) @ vec.T
    # remove rounding residue per component
    comp = graph.components
    onehot = np.eye(comp.max() + 1)[comp]
    phi = phi - (phi @ onehot / onehot.sum(axis=0)) @ onehot.T
    return phi[0] if size is None else phi


def error_rates_from_predictive(ppv, false_omission, positive_rate):
    """Classifier (TPR, FPR) and base rate implied by PPV, false omission
    rate and classified-positive rate, via Bayes' rule."""
    p11 = ppv * positive_rate
    p01 = false_omission * (1.0 - positive_rate)
    base = p11 + p01
    tpr = p11 / base
    fpr = (positive_rate - p11) / (1.0 - base)
    return tpr, fpr, base


@dataclass
class TruthConfig:
    """Generating parameters. ``beta`` has one entry per synthetic feature."""

    alpha: float = -5.0
    beta: tuple = (1.0,)
    sigma_phi: float = 1.0
    theta_tpr: float = 0.7
    theta_fpr: float = 0.002
    images_mean: float = 220.0
    images_dispersion: float = 10.0  # negative-binomial size; None for a fixed count
    n_annot_pos: int = 50
    n_annot_neg: int = 50
    phi: np.ndarray = None  # fixed spatial field; sampled when None


@dataclass
class SyntheticTruth:
    params: ModelParams
    graph: TractGraph
    polygons: list
    features: FeatureMatrix
    risk: np.ndarray
    n_images: np.ndarray
    true_labels: np.ndarray  # aligned with the returned records
    extra: dict = field(default_factory=dict)

    @property
    def phi(self):
        return self.params.phi


def generate_dataset(graph, polygons, config, seed):
    """Draw images, classifier labels and annotations from known parameters.

    Returns ``(RecordSet, SyntheticTruth)``; records carry coordinates inside
    their tract polygon and their ``tract`` assignment.
    """
    ss = np.random.SeedSequence(seed)
    s_phi, s_feat, s_count, s_img, s_annot = ss.spawn(5)
    n = graph.n
    poly_by_id = {p.tract_id: p for p in polygons}

    phi = (np.asarray(config.phi, dtype=np.float64) if config.phi is not None
           else sample_icar(graph, s_phi))
    beta = np.asarray(config.beta, dtype=np.float64)
    if beta.size:
        raw = np.random.default_rng(s_feat).standard_normal((n, beta.size))
        features = preprocess_features(raw, graph.tract_ids,
                                       names=[f"feature{j}" for j in range(beta.size)],
                                       skew_threshold=np.inf)
    else:
        features = FeatureMatrix.empty(graph.tract_ids)
    params = ModelParams(config.alpha, beta, phi, config.sigma_phi,
                         config.theta_tpr, config.theta_fpr).check(allow_boundary=True)
    eta = params.alpha + phi * params.sigma_phi
    if beta.size:
        eta = eta + features.values @ beta
    risk = 1.0 / (1.0 + np.exp(-eta))

    crng = np.random.default_rng(s_count)
    if config.images_dispersion is None:
        n_img = np.full(n, int(round(config.images_mean)), dtype=np.int64)
    else:
        k = config.images_dispersion
        n_img = crng.negative_binomial(k, k / (k + config.images_mean), size=n).astype(np.int64)

    # per-tract streams keep tracts independent of each other's draws
    img_seeds = s_img.spawn(n)
    ids, xs, ys, yhat, truth, tract = [], [], [], [], [], []
    for c, t in enumerate(graph.tract_ids):
        rng = np.random.default_rng(img_seeds[c])
        m = int(n_img[c])
        y = (rng.random(m) < risk[c]).astype(np.int8)
        flip = rng.random(m)
        yh = np.where(y == 1, flip < params.theta_tpr, flip < params.theta_fpr).astype(np.int8)
        pts = random_points_in(poly_by_id[t], m, rng) if m else np.zeros((0, 2))
        ids.extend(f"{t}-{i:05d}" for i in range(m))
        xs.append(pts[:, 0])
        ys.append(pts[:, 1])
        yhat.append(yh)
        truth.append(y)
        tract.extend([t] * m)
    truth = np.concatenate(truth) if truth else np.zeros(0, dtype=np.int8)
    records = RecordSet(ids, np.concatenate(xs), np.concatenate(ys), np.concatenate(yhat),
                        tract=np.array(tract, dtype=object))
    chosen = select_annotation_sample(records, config.n_annot_pos, config.n_annot_neg, s_annot)
    records = annotate(records, chosen, truth)
    return records, SyntheticTruth(params, graph, list(polygons), features, risk, n_img, truth)


def synthetic_counts(graph, polygons, config, seed):
    """Convenience: generate a dataset and aggregate it."""
    records, truth = generate_dataset(graph, polygons, config, seed)
    return aggregate_counts(records, graph.tract_ids), records, truth
