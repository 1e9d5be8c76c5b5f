"""Command-line pipeline: ``floodrisk <subcommand> [--config run.json] ...``.

Every subcommand reads one JSON run configuration (flags override it) and
stamps its outputs with the configuration hash and master seed.
"""
import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import apps, baselines, graph as graphmod, ingest, posterior, sampler, simulate
from .model import ModelData, Priors

log = logging.getLogger("floodrisk")

DEFAULTS = {
    "paths": {"geometry": None, "edges": None, "records": None, "counts": None,
              "features": None, "indicators": None, "existing_sensors": None,
              "summary": None},
    "geometry_id_property": "tract_id",
    "buffer_distance": 0.0,
    "priors": {},
    "hmc": {},
    "preprocess": {"skew_threshold": 1.0},
    "annotation": {"n_pos": 50, "n_neg": 50},
    "evaluation": {"split_seeds": list(range(10)), "train_fraction": 0.3,
                   "factors": [2, 5, 10, 20], "percentile": 25.0, "level": 0.95},
    "placement": {"U": 25, "k": 1},
    "audit": {"outcome": "has_311_report", "joint": False},
    "simulate": {"rows": 10, "cols": 10, "truth": {}},
    "use_features": True,
    "out": "floodrisk_out",
    "seed": 0,
}


class InputError(ValueError):
    """Bad or missing input; exit status 1."""


# -- configuration ----------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise InputError("config must be a JSON object")
        base = Path(path).resolve().parent
        for k, v in (user.get("paths") or {}).items():
            if v is not None and not os.path.isabs(v):
                user["paths"][k] = str(base / v)
        cfg = _merge(cfg, user)
    return _merge(cfg, overrides)


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Run:
    """Resolved configuration plus output helpers."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.seed = int(cfg["seed"])
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def header(self):
        return f"config_hash={self.hash} seed={self.seed}"

    @property
    def provenance(self):
        return {"config_hash": self.hash, "seed": self.seed}

    def path(self, name):
        return self.out / name

    def input(self, key, required=True):
        p = self.cfg["paths"].get(key)
        if p is None:
            if required:
                raise InputError(f"paths.{key} is required for this subcommand")
            return None
        if not os.path.exists(p):
            raise InputError(f"paths.{key} does not exist: {p}")
        return p

    def write_json(self, name, obj):
        doc = {"provenance": self.provenance, **obj}
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def hmc(self):
        h = dict(self.cfg["hmc"])
        h.setdefault("master_seed", self.seed)
        if self.cfg.get("threads"):
            h["threads"] = int(self.cfg["threads"])
        return sampler.HmcConfig.from_dict(h)

    def priors(self):
        return Priors.from_dict(self.cfg["priors"])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(type(o).__name__)


# -- shared loaders ---------------------------------------------------------

def _polygons(run, required=True):
    p = run.input("geometry", required)
    return graphmod.read_geojson(p, run.cfg["geometry_id_property"]) if p else None


def _graph(run, polygons=None):
    edges = run.input("edges", required=False)
    if edges:
        ids = [p.tract_id for p in polygons] if polygons else None
        return graphmod.read_edges_csv(edges, ids)
    if polygons is None:
        polygons = _polygons(run)
    return graphmod.build_adjacency(polygons, float(run.cfg["buffer_distance"]))


def _features(run, tract_ids, required=False):
    if not run.cfg.get("use_features", True):
        return None
    p = run.input("features", required)
    if p is None:
        return None
    if os.path.exists(str(p) + ".json"):
        return ingest.read_features(p).reorder(tract_ids)
    ids, names, vals = ingest.read_raw_features(p)
    fm = ingest.preprocess_features(vals, ids, names, run.cfg["preprocess"]["skew_threshold"])
    return fm.reorder(tract_ids)


def _assigned_records(run, polygons):
    recs = ingest.read_records(run.input("records"))
    if recs.tract is None:
        if polygons is None:
            raise InputError("records lack tract_id; paths.geometry is needed to assign them")
        recs, report = ingest.assign_images_to_tracts(recs, polygons)
        if report.drop_count:
            log.warning("dropped %d records during assignment", report.drop_count)
    return recs


def _counts(run, tract_ids, polygons=None):
    p = run.cfg["paths"].get("counts")
    if p:
        return ingest.read_counts_csv(run.input("counts")).reorder(tract_ids)
    return ingest.aggregate_counts(_assigned_records(run, polygons), tract_ids)


def _existing(run, tract_ids):
    p = run.input("existing_sensors", required=False)
    if p:
        with open(p) as fh:
            ids = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if ids and ids[0] == "tract_id":
            ids = ids[1:]
        return ids
    ind = run.input("indicators", required=False)
    if ind:
        tab = apps.IndicatorTable.read_csv(ind)
        col = apps.INDICATORS.index("has_sensor")
        return [t for t, v in zip(tab.tract_ids, tab.indicators[:, col]) if v == 1 and t in tract_ids]
    return []


def _summary(run):
    return posterior.read_summary_csv(run.input("summary"))


# -- subcommands ------------------------------------------------------------

def cmd_adjacency(run, strict=False):
    polys = _polygons(run)
    g = graphmod.build_adjacency(polys, float(run.cfg["buffer_distance"]))
    graphmod.write_edges_csv(g, run.path("edges.csv"), run.header)
    rep = graphmod.validate_graph(g)
    run.write_json("adjacency_report.json", rep.to_dict())
    print(f"{g.n} tracts, {len(g.edges)} edges, {rep.n_components} component(s)")
    if strict and (not rep.connected or rep.isolated):
        raise InputError(f"graph validation failed: {rep.n_components} components, "
                         f"{len(rep.isolated)} isolated tracts")
    return rep


def cmd_ingest(run, strict=False):
    polys = _polygons(run)
    ids = tuple(p.tract_id for p in polys)
    recs = ingest.read_records(run.input("records"))
    recs, report = ingest.assign_images_to_tracts(recs, polys)
    if strict and report.drop_count:
        raise InputError(f"{report.drop_count} records could not be assigned")
    table = ingest.aggregate_counts(recs, ids)
    ingest.write_records(recs, run.path("records_assigned.jsonl"))
    ingest.write_counts_csv(table, run.path("counts.csv"), run.header)
    run.write_json("drop_report.json", report.to_dict())
    fm = _features(run, ids)
    if fm is not None:
        ingest.write_features(fm, run.path("features.csv"), run.header)
    print(f"{len(recs)} records into {len(ids)} tracts; dropped {report.drop_count}")
    return table


def cmd_simulate(run, strict=False):
    sc = run.cfg["simulate"]
    truth_cfg = dict(sc.get("truth") or {})
    truth_cfg.setdefault("n_annot_pos", run.cfg["annotation"]["n_pos"])
    truth_cfg.setdefault("n_annot_neg", run.cfg["annotation"]["n_neg"])
    if "beta" in truth_cfg:
        truth_cfg["beta"] = tuple(truth_cfg["beta"])
    g, polys = simulate.make_grid_graph(int(sc["rows"]), int(sc["cols"]))
    recs, truth = simulate.generate_dataset(g, polys, simulate.TruthConfig(**truth_cfg), run.seed)
    with open(run.path("geometry.geojson"), "w") as fh:
        doc = graphmod.polygons_to_geojson(polys)
        doc["metadata"] = run.provenance
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    graphmod.write_edges_csv(g, run.path("edges.csv"), run.header)
    # records are written without tract ids so that ingest does the spatial join
    ingest.write_records(ingest.RecordSet(recs.image_id, recs.x, recs.y, recs.yhat, recs.label),
                         run.path("records.jsonl"))
    ingest.write_features(truth.features, run.path("features.csv"), run.header)
    rng = np.random.default_rng(np.random.SeedSequence(run.seed).spawn(6)[5])
    n = g.n
    with open(run.path("indicators.csv"), "w") as fh:
        fh.write(f"# {run.header}\n")
        fh.write("tract_id,has_311_report,has_sensor,has_stormwater_prediction,population,income\n")
        z = (truth.risk - truth.risk.mean()) / truth.risk.std()
        report = rng.random(n) < 1.0 / (1.0 + np.exp(-(-1.0 + 2.0 * z)))
        for i, t in enumerate(g.tract_ids):
            fh.write(f"{t},{int(report[i])},{int(rng.random() < 0.05)},{int(rng.random() < 0.3)},"
                     f"{int(rng.integers(500, 5000))},{rng.normal():.6f}\n")
    p = truth.params
    run.write_json("truth.json", {
        "alpha": p.alpha, "beta": p.beta, "sigma_phi": p.sigma_phi, "theta_tpr": p.theta_tpr,
        "theta_fpr": p.theta_fpr, "phi": dict(zip(g.tract_ids, p.phi.tolist())),
        "risk": dict(zip(g.tract_ids, truth.risk.tolist()))})
    print(f"simulated {len(recs)} images over {n} tracts")
    return truth


def cmd_fit(run, strict=False):
    polys = _polygons(run, required=False)
    g = _graph(run, polys)
    counts = _counts(run, g.tract_ids, polys)
    fm = _features(run, g.tract_ids)
    data = ModelData(counts, g, fm, run.priors())
    draws = sampler.hmc_run(data, run.hmc())
    ev = run.cfg["evaluation"]
    summ = posterior.summarize(draws, float(ev["level"]), counts)
    conf = posterior.confirmed_tracts(counts)
    hr = posterior.high_risk(summ, conf, float(ev["percentile"])) if conf else None
    draws.write_csv(run.path("draws.csv"), run.header)
    draws.write_diagnostics(run.path("diagnostics.json"), {"provenance": run.provenance})
    summ.write_csv(run.path("summary.csv"), run.header, hr)
    if polys is not None:
        props = summ.properties(hr)
        keep = [p for p in polys if p.tract_id in props]
        doc = graphmod.polygons_to_geojson(keep, props)
        doc["metadata"] = run.provenance
        with open(run.path("summary.geojson"), "w") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    d = draws.diagnostics()
    print(f"fit {g.n} tracts, {data.p} features: max R-hat {d['max_rhat']:.4f}, "
          f"min ESS {d['min_ess']:.0f}, {d['divergences']} divergences")
    if strict and (d["divergences"] or (d["max_rhat"] or 0) >= 1.01):
        raise sampler.SamplerError("convergence checks failed under --strict")
    return draws


def _fit_config(run):
    return {"hmc": run.hmc(), "priors": run.priors()}


def cmd_evaluate(run, strict=False):
    polys = _polygons(run, required=False)
    g = _graph(run, polys)
    recs = _assigned_records(run, polys)
    fm = _features(run, g.tract_ids, required=True)
    ev = run.cfg["evaluation"]
    rep = baselines.run_benchmark(recs, fm, g, ev["split_seeds"], fit_config=_fit_config(run),
                                  train_fraction=float(ev["train_fraction"]))
    rep.write_csv(run.path("benchmark.csv"), run.header)
    print(rep.format_table())
    if rep.failures:
        print(f"{len(rep.failures)} method failures recorded")
    return rep


def cmd_downsample(run, strict=False):
    polys = _polygons(run, required=False)
    g = _graph(run, polys)
    counts = _counts(run, g.tract_ids, polys)
    fm = _features(run, g.tract_ids)
    res = baselines.downsampling_experiment(counts, fm, g, run.cfg["evaluation"]["factors"],
                                            _fit_config(run), run.seed)
    with open(run.path("downsample.csv"), "w") as fh:
        fh.write(f"# {run.header}\nfactor,correlation\n")
        for f, r in res.items():
            fh.write(f"{f},{r!r}\n")
            print(f"factor {f:>3}: r = {r:.3f}")
    return res


def cmd_gap(run, strict=False):
    summ = _summary(run)
    counts = _counts(run, summ.tract_ids, _polygons(run, required=False))
    hr = posterior.high_risk(summ, posterior.confirmed_tracts(counts),
                             float(run.cfg["evaluation"]["percentile"]))
    ind = apps.IndicatorTable.read_csv(run.input("indicators"))
    rep = apps.gap_analysis(hr, ind)
    run.write_json("gap_report.json", {"high_risk": sorted(hr.members),
                                       "threshold": hr.threshold, **rep.to_dict()})
    for k in apps.INDICATORS:
        print(f"lacking {k}: {len(rep.lacking[k])} tracts, population {rep.population[k]}")
    print(f"lacking all: {len(rep.lacking_all)} tracts, population {rep.population_all}")
    return rep


def cmd_audit(run, strict=False):
    summ = _summary(run)
    ind = apps.IndicatorTable.read_csv(run.input("indicators"))
    idx = ind.index()
    missing = [t for t in summ.tract_ids if t not in idx]
    if missing:
        raise InputError(f"indicator table lacks tracts {missing[:5]}")
    rows = [idx[t] for t in summ.tract_ids]
    oc = run.cfg["audit"]["outcome"]
    if oc not in apps.INDICATORS:
        raise InputError(f"audit.outcome must be one of {apps.INDICATORS}")
    y = ind.indicators[rows, apps.INDICATORS.index(oc)]
    dem = {k: v[rows] for k, v in ind.demographics.items()}
    res = apps.risk_adjusted_audit(summ.mean, y, dem, joint=bool(run.cfg["audit"]["joint"]))
    res.write_csv(run.path("audit.csv"), run.header)
    for r in res.rows:
        print(f"{r.feature}: {'separated' if r.separated else f'{r.coef:+.3f} [{r.lo:+.3f}, {r.hi:+.3f}]'}")
    return res


def cmd_place(run, strict=False):
    polys = _polygons(run, required=False)
    g = _graph(run, polys)
    summ = _summary(run)
    risk = dict(zip(summ.tract_ids, summ.mean.tolist()))
    pc = run.cfg["placement"]
    res = apps.greedy_placement(risk, g, _existing(run, set(g.tract_ids)), int(pc["U"]),
                                int(pc["k"]))
    res.write_csv(run.path("placement.csv"), run.header)
    if polys is not None:
        res.write_geojson(run.path("placement.geojson"), polys, run.provenance)
    print(f"placed {len(res.chosen)} sensors; covered risk {res.objective_before:.4f} -> "
          f"{res.objective_after:.4f}")
    return res


COMMANDS = {
    "adjacency": cmd_adjacency, "ingest": cmd_ingest, "simulate": cmd_simulate,
    "fit": cmd_fit, "evaluate": cmd_evaluate, "downsample": cmd_downsample,
    "gap": cmd_gap, "audit": cmd_audit, "place": cmd_place,
}

INPUT_ERRORS = (InputError, graphmod.GraphError, ingest.IngestError, apps.AppError,
                baselines.BaselineError, posterior.PosteriorError, OSError, KeyError, ValueError)


def build_parser():
    ap = argparse.ArgumentParser(prog="floodrisk", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="master seed (overrides config)")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--threads", type=int, help="sampler worker threads")
    ap.add_argument("--strict", action="store_true", help="treat validation warnings as errors")
    ap.add_argument("--no-features", action="store_true", help="fit without tract features")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out:
        over["out"] = args.out
    if args.threads:
        over["threads"] = args.threads
    if args.no_features:
        over["use_features"] = False
    try:
        run = Run(load_config(args.config, over))
        COMMANDS[args.command](run, strict=args.strict)
    except sampler.SamplerError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
