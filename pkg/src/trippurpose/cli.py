"""Command-line batch runner: ``trippurpose <stage> [options]``.

Every stage reads its inputs from the output directory (or from paths given
in the config / on the command line) and writes its artifacts there. A
single INI config file holds all settings; ``--set section.key=value``
overrides individual entries.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 missing
upstream artifact.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import run_phases, scaled_subsample
from .core import ActivityType
from .errors import ConfigError, StageDependency, TripPurposeError
from .ingest import (
    LABELED_COLUMNS,
    STAYPOINT_COLUMNS,
    fmt_float,
    iter_agent_pings,
    load_enrichment,
    load_pings,
    load_pois,
    load_reference,
    load_staypoints,
    staypoint_rows,
    write_pings,
    write_pois,
    write_reference,
    write_staypoints,
)
from .metrics import build_report
from .params import GENE_BY_NAME, GENES, ParamVector, detuned_params
from .pipeline import infer_corpus
from .robustness import noise_experiment, poi_experiment
from .staypoints import extract_staypoints
from .synthetic import SyntheticConfig, generate_synthetic, survey_reference
from .tables import PingTable
from .zones import build_zones, write_zones

log = logging.getLogger("trippurpose")

DEFAULTS = {
    "paths": {
        "out_dir": "out",
        "pings": "",
        "pois": "",
        "reference": "",
        "enrichment": "",
        "staypoints": "",
        "labeled": "",
        "params": "",
    },
    "run": {"seed": "0", "workers": "1", "chunk_agents": "2000", "log_level": "INFO"},
    "extract": {"d_max": "200", "t_min": "300", "gap_max": "3600", "batch_agents": "500"},
    "inference": {"per_activity_bidding": "false"},
    "evaluation": {"tau_c": "0.5"},
    "params": {g.name: repr(g.default) for g in GENES},
    "bounds": {},
    "calibration": {
        "start": "default",
        "population": "40",
        "generations": "30,30,30",
        "subsample": "20000",
        "scale_subsample": "false",
        "tolerance": "0.01",
    },
    "robustness": {"noise_levels": "5,10,20", "poi_rates": "0.05,0.10", "tolerance_s": "0"},
    "synth": {"n_agents": "100", "n_days": "14", "survey_agents": "2000"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


class RunConfig:
    """Resolved settings: defaults, then the config file, then overrides."""

    def __init__(self, path=None, overrides=()):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict(DEFAULTS)
        if path:
            if not Path(path).is_file():
                raise ConfigError(f"config file not found: {path}")
            user = configparser.ConfigParser(interpolation=None)
            user.optionxform = str
            try:
                user.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            for sec in user.sections():
                for key, val in user[sec].items():
                    self._check(sec, key)
                    cp[sec][key] = val
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override must look like section.key=value: {item!r}")
            k, v = item.split("=", 1)
            sec, key = k.split(".", 1)
            self._check(sec, key)
            cp[sec][key] = v
        self.cp = cp

    @staticmethod
    def _check(sec, key):
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
        if sec == "bounds":
            if key not in GENE_BY_NAME:
                raise ConfigError(f"unknown parameter in [bounds]: {key}")
        elif key not in DEFAULTS[sec]:
            raise ConfigError(f"unknown config key {sec}.{key}")

    def get(self, sec, key) -> str:
        return self.cp[sec][key]

    def num(self, sec, key, kind=float):
        try:
            return kind(self.cp[sec][key])
        except ValueError as exc:
            raise ConfigError(f"{sec}.{key}: not a number: {self.cp[sec][key]!r}") from exc

    def nums(self, sec, key, kind=float) -> list:
        try:
            return [kind(x) for x in self.cp[sec][key].split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"{sec}.{key}: expected comma-separated numbers") from exc

    def flag(self, sec, key) -> bool:
        try:
            return self.cp.getboolean(sec, key)
        except ValueError as exc:
            raise ConfigError(f"{sec}.{key}: expected a boolean") from exc

    def set(self, sec, key, value):
        self.cp[sec][key] = str(value)

    def as_dict(self) -> dict:
        return {s: dict(self.cp[s]) for s in self.cp.sections()}

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.get("paths", "out_dir"))

    def path(self, key, default_name) -> Path:
        v = self.get("paths", key)
        return Path(v) if v else self.out / default_name

    def params(self) -> ParamVector:
        vals = {k: self.num("params", k) for k in self.cp["params"]}
        pfile = self.get("paths", "params")
        if pfile:
            p = Path(pfile)
            if not p.is_file():
                raise StageDependency(f"parameter file not found: {p}")
            extra = configparser.ConfigParser(interpolation=None)
            extra.optionxform = str
            extra.read(p)
            if "params" not in extra:
                raise ConfigError(f"{p}: no [params] section")
            for k, v in extra["params"].items():
                if k not in GENE_BY_NAME:
                    raise ConfigError(f"{p}: unknown parameter {k}")
                vals[k] = float(v)
        return ParamVector(vals)

    def bounds(self) -> dict:
        out = {}
        for k, v in self.cp["bounds"].items():
            try:
                lo, hi = (float(x) for x in v.split(","))
            except ValueError as exc:
                raise ConfigError(f"bounds.{k}: expected 'lo,hi'") from exc
            g = GENE_BY_NAME[k]
            if not g.lo <= lo <= hi <= g.hi:
                raise ConfigError(f"bounds.{k}: [{lo}, {hi}] must lie within [{g.lo}, {g.hi}]")
            out[k] = (lo, hi)
        return out


def _need(path: Path) -> Path:
    if not Path(path).is_file():
        raise StageDependency(f"missing upstream artifact: {path}")
    return Path(path)


def _dump_json(obj, path: Path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _manifest(cfg: RunConfig, stage: str, artifacts):
    """Record provenance of a stage's outputs in ``manifest.json``."""
    path = cfg.out / "manifest.json"
    data = json.loads(path.read_text()) if path.is_file() else {}
    versions = {"trippurpose": __version__}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            versions[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    data[stage] = {"config_hash": cfg.digest(), "artifacts": sorted(str(Path(a).name) for a in artifacts), "versions": versions}
    _dump_json(data, path)


def _throughput(stage, n, t0):
    dt = time.perf_counter() - t0
    log.info("%s: %d staypoints in %.2f s (%.0f staypoints/s)", stage, n, dt, n / max(dt, 1e-9))


def _reference(cfg):
    return load_reference(_need(cfg.path("reference", "reference.stats")))


def _pois(cfg):
    enr = cfg.get("paths", "enrichment")
    table = load_enrichment(_need(Path(enr))) if enr else None
    pois, _ = load_pois(_need(cfg.path("pois", "pois.csv")), table)
    return pois


def _extract_kw(cfg) -> dict:
    return dict(d_max=cfg.num("extract", "d_max"), t_min=cfg.num("extract", "t_min", int), gap_max=cfg.num("extract", "gap_max", int))


# ---------------------------------------------------------------------------
# stages

def cmd_synth(cfg: RunConfig):
    seed = cfg.num("run", "seed", int)
    sc = SyntheticConfig(n_agents=cfg.num("synth", "n_agents", int), n_days=cfg.num("synth", "n_days", int))
    pings, pois, truth = generate_synthetic(sc, seed)
    survey = SyntheticConfig(n_agents=cfg.num("synth", "survey_agents", int), n_days=sc.n_days)
    _, _, survey_truth = generate_synthetic(survey, seed + 1_000_003, emit_pings=False)
    out = cfg.out
    write_pings(pings, out / "pings.csv")
    write_pois(pois, out / "pois.csv")
    write_reference(survey_reference(survey_truth), out / "reference.stats")
    with open(out / "truth_anchors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "home_lat", "home_lon", "mand_code", "mand_lat", "mand_lon"])
        for i, a in enumerate(truth.agent_ids):
            mt = int(truth.mand_type[i])
            w.writerow([a, fmt_float(truth.home_lat[i]), fmt_float(truth.home_lon[i]), mt]
                       + ([fmt_float(truth.mand_lat[i]), fmt_float(truth.mand_lon[i])] if mt else ["", ""]))
    with open(out / "truth_visits.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "t_start", "t_end", "activity_code", "lat", "lon"])
        for k in range(truth.visit_t0.size):
            w.writerow([truth.agent_ids[truth.visit_agent[k]], int(truth.visit_t0[k]), int(truth.visit_t1[k]),
                        int(truth.visit_label[k]), fmt_float(truth.visit_lat[k]), fmt_float(truth.visit_lon[k])])
    log.info("synth: %d agents, %d pings, %d POIs", sc.n_agents, len(pings), len(pois))
    return [out / n for n in ("pings.csv", "pois.csv", "reference.stats", "truth_anchors.csv", "truth_visits.csv")]


def cmd_extract(cfg: RunConfig):
    src = _need(cfg.path("pings", "pings.csv"))
    dst = cfg.out / "staypoints.csv"
    kw = _extract_kw(cfg)
    batch = max(1, cfg.num("extract", "batch_agents", int))
    t0 = time.perf_counter()
    n = 0
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAYPOINT_COLUMNS)
        buf = []

        def flush():
            nonlocal n
            if buf:
                sp = extract_staypoints(PingTable.concat(buf), **kw)
                w.writerows(staypoint_rows(sp))
                n += len(sp)
                buf.clear()

        for table in iter_agent_pings(src):
            buf.append(table)
            if len(buf) >= batch:
                flush()
        flush()
    _throughput("extract", n, t0)
    return [dst]


def cmd_zones(cfg: RunConfig):
    params = cfg.params()
    zones = build_zones(_pois(cfg), params["eps_poi"])
    dst = cfg.out / "zones.csv"
    write_zones(zones, dst)
    log.info("zones: %d semantic zones", len(zones))
    return [dst]


def cmd_infer(cfg: RunConfig):
    sp = load_staypoints(_need(cfg.path("staypoints", "staypoints.csv")))
    pois, ref = _pois(cfg), _reference(cfg)
    t0 = time.perf_counter()
    res = infer_corpus(
        sp, pois, ref, cfg.params(),
        workers=cfg.num("run", "workers", int),
        chunk_agents=cfg.num("run", "chunk_agents", int),
        per_activity=cfg.flag("inference", "per_activity_bidding"),
    )
    _throughput("infer", len(sp), t0)
    dst = cfg.out / "labeled_staypoints.csv"
    write_staypoints(res.staypoints, dst, labeled=True)
    np.save(cfg.out / "flagged.npy", res.flagged)
    if res.no_home_agents:
        log.warning("infer: %d agents without Home evidence routed to non-mandatory scoring", res.no_home_agents)
    return [dst, cfg.out / "flagged.npy"]


def cmd_evaluate(cfg: RunConfig):
    labeled = _need(cfg.path("labeled", "labeled_staypoints.csv"))
    sp = load_staypoints(labeled)
    ref = _reference(cfg)
    fpath = cfg.out / "flagged.npy"
    flagged = np.load(fpath) if fpath.is_file() else None
    if flagged is not None and flagged.size != len(sp):
        flagged = None
    rep = build_report(sp, ref, flagged, cfg.num("evaluation", "tau_c"))
    out = rep.to_dict()
    out["config_hash"] = cfg.digest()
    dst = cfg.out / "report.json"
    _dump_json(out, dst)
    log.info("evaluate: %s", {k: round(v, 4) for k, v in rep.headline().items()})
    return [dst]


def cmd_calibrate(cfg: RunConfig):
    sp = load_staypoints(_need(cfg.path("staypoints", "staypoints.csv")))
    pois, ref = _pois(cfg), _reference(cfg)
    start_kind = cfg.get("calibration", "start")
    if start_kind not in ("default", "detuned"):
        raise ConfigError("calibration.start must be 'default' or 'detuned'")
    start = cfg.params() if start_kind == "default" else detuned_params()
    gens = cfg.nums("calibration", "generations", int)
    if len(gens) != 3:
        raise ConfigError("calibration.generations needs three comma-separated values")
    sub = cfg.num("calibration", "subsample", int)
    if cfg.flag("calibration", "scale_subsample"):
        sub = scaled_subsample(sp.n_agents)
    res = run_phases(
        sp, pois, ref, start,
        generations=tuple(gens),
        pop_size=cfg.num("calibration", "population", int),
        subsample=sub,
        seed=cfg.num("run", "seed", int),
        workers=cfg.num("run", "workers", int),
        tolerance=cfg.num("calibration", "tolerance"),
        bounds=cfg.bounds(),
    )
    trace = res.to_dict()
    trace["config_hash"] = cfg.digest()
    trace_path = cfg.out / "calibration_trace.json"
    _dump_json(trace, trace_path)
    params_path = cfg.out / "params_final.ini"
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["params"] = {k: repr(v) for k, v in res.params.items()}
    with open(params_path, "w") as fh:
        fh.write(f"# calibrated parameters, config {cfg.digest()}\n")
        cp.write(fh)
    return [trace_path, params_path]


def cmd_robustness(cfg: RunConfig):
    pings, skipped = load_pings(_need(cfg.path("pings", "pings.csv")))
    pois, ref = _pois(cfg), _reference(cfg)
    params = cfg.params()
    seed = cfg.num("run", "seed", int)
    workers = cfg.num("run", "workers", int)
    kw = _extract_kw(cfg)
    sp = extract_staypoints(pings, **kw)
    original = infer_corpus(sp, pois, ref, params, workers).staypoints
    reports = noise_experiment(pings, pois, ref, params, cfg.nums("robustness", "noise_levels"), seed, original,
                               cfg.num("robustness", "tolerance_s", int), kw, workers)
    del pings
    reports += poi_experiment(sp, pois, ref, params, cfg.nums("robustness", "poi_rates"), seed, original, workers)
    out = []
    for r in reports:
        d = r.to_dict()
        d["config_hash"] = cfg.digest()
        dst = cfg.out / f"stability_{r.experiment}_{r.level:g}.json"
        _dump_json(d, dst)
        out.append(dst)
        log.info("robustness %s %g: match %.4f all %.4f high %.4f low %.4f", r.experiment, r.level,
                 r.match_rate, r.stability_all, r.stability_high, r.stability_low)
    return out


def cmd_plot_data(cfg: RunConfig):
    rep = json.loads(_need(cfg.out / "report.json").read_text())
    ref = _reference(cfg)
    out = []
    freq = np.asarray(rep["label_histogram"], dtype=float)
    dst = cfg.out / "plot_activity_frequency.csv"
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["activity_code", "activity", "inferred_share", "reference_share"])
        tot = freq.sum() or 1.0
        for a in ActivityType:
            w.writerow([int(a), a.label, fmt_float(freq[a.index] / tot), fmt_float(ref.activity_shares[a.index])])
    out.append(dst)
    for name, key, prior in (("start_time", "start_histograms", ref.start_prior), ("duration", "duration_histograms", ref.duration_prior)):
        h = np.asarray(rep[key], dtype=float)
        dst = cfg.out / f"plot_{name}.csv"
        with open(dst, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["activity_code", "bin", "inferred", "reference"])
            for a in ActivityType:
                row = h[a.index]
                s = row.sum()
                for b in range(row.size):
                    w.writerow([int(a), b, fmt_float(row[b] / s if s else 0.0), fmt_float(prior[a.index, b])])
        out.append(dst)
    stab = sorted(cfg.out.glob("stability_*.json"))
    if stab:
        dst = cfg.out / "plot_stability.csv"
        with open(dst, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["experiment", "level", "match_rate", "stability_all", "stability_high", "stability_low"])
            for p in stab:
                d = json.loads(p.read_text())
                w.writerow([d["experiment"], fmt_float(d["level"])] + [fmt_float(d[k]) for k in ("match_rate", "stability_all", "stability_high", "stability_low")])
        out.append(dst)
    return out


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic corpus with ground truth"),
    "extract": (cmd_extract, "extract staypoints from pings"),
    "zones": (cmd_zones, "build semantic POI zones"),
    "infer": (cmd_infer, "label staypoints"),
    "evaluate": (cmd_evaluate, "score labels against the reference"),
    "calibrate": (cmd_calibrate, "three-phase parameter calibration"),
    "robustness": (cmd_robustness, "noise and POI-deletion stability"),
    "plot-data": (cmd_plot_data, "CSV series for distribution and stability plots"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trippurpose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("-c", "--config", help="INI config file")
        s.add_argument("-o", "--out", help="output directory (paths.out_dir)")
        s.add_argument("--seed", type=int, help="master seed (run.seed)")
        s.add_argument("--workers", type=int, help="worker processes (run.workers)")
        s.add_argument("--pings", help="ping CSV")
        s.add_argument("--pois", help="POI CSV")
        s.add_argument("--reference", help="reference statistics file")
        s.add_argument("--params", help="INI file with a [params] section")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config entry")
    return p


def _resolve(args) -> RunConfig:
    over = list(args.set)
    for flag, key in (("out", "paths.out_dir"), ("seed", "run.seed"), ("workers", "run.workers"), ("pings", "paths.pings"),
                      ("pois", "paths.pois"), ("reference", "paths.reference"), ("params", "paths.params")):
        v = getattr(args, flag)
        if v is not None:
            over.append(f"{key}={v}")
    return RunConfig(args.config, over)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve(args)
        logging.basicConfig(level=cfg.get("run", "log_level").upper(), format="%(levelname)s %(name)s: %(message)s")
        cfg.out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command][0]
        artifacts = fn(cfg)
        _manifest(cfg, args.command, artifacts)
        return 0
    except StageDependency as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TripPurposeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
