"""``gaitsep`` command line: synth, prepare, train-loso, eval-sensors, profile,
export and infer.

Exit codes: 0 success, 1 internal error or failed fold, 2 usage error or
refusal to overwrite, 3 data validation error, 4 missing input file,
5 subject without windows.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from gaitsep import __version__
from gaitsep import data as D
from gaitsep import metrics as ME
from gaitsep import models as M
from gaitsep import runtime as R
from gaitsep import threshold as TH
from gaitsep import trainer as T

log = logging.getLogger("gaitsep")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING_FILE = 4
EXIT_EMPTY_SUBJECT = 5

DETECTORS = ("model1", "model2", "baseline", "threshold")
DETECTOR_LABELS = {"model1": "Model 1", "model2": "Model 2", "baseline": "Baseline", "threshold": "Threshold"}
REPORT_NOTES = {
    "std": "population standard deviation over folds",
    "baseline_padding": "even kernel (k=10) padded 4 left, 5 right",
    "decision_rule": "gait iff p_gait >= tau*; threshold detector: gait iff magnitude > tau",
    "row_order": "subjects ascending by id",
}
TABLE_COLUMNS = (("accuracy", "Acc"), ("specificity", "TNR"), ("recall", "TPR"), ("precision", "PPV"), ("f1", "F1"))


class UsageError(Exception):
    """Bad arguments or configuration."""


class EmptySubjectError(D.DataError):
    """A configured subject produced no windows."""


# --- configuration -------------------------------------------------------------------


def default_config() -> dict:
    return {
        "seed": 12,
        "output_dir": "runs",
        "cache": None,
        "subjects": list(D.PAPER_SUBJECTS),
        "sensors": ["ch"],
        "detectors": list(DETECTORS),
        "jobs": 1,
        "synth": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(D.SynthConfig()).items()},
        "prepare": {
            "csv_dir": None,
            "gait_activities": list(D.DEFAULT_GAIT_ACTIVITIES),
            "excluded_activities": list(D.DEFAULT_EXCLUDED_ACTIVITIES),
            "columns": {},
        },
        "train": {},
        "threshold": {"raw": False},
    }


_OPEN_SECTIONS = {("prepare", "columns"), ("train",)}


def _merge(base: dict, override: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = ".".join(path + (key,))
        if path + (key,) in _OPEN_SECTIONS or path in _OPEN_SECTIONS:
            out[key] = value
            continue
        if key not in base:
            raise UsageError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {where!r} must be a table")
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = value
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(raw.decode("utf-8"))
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def resolve_config(overrides: dict) -> dict:
    """Defaults merged with ``overrides``; training options fully expanded and validated."""
    cfg = _merge(default_config(), overrides or {})
    train = dict(cfg["train"])
    train.setdefault("seed", cfg["seed"])
    try:
        cfg["train"] = T.TrainConfig.from_dict(train).to_dict()
        synth = dict(cfg["synth"])
        synth["gait_freq_range_hz"] = tuple(synth["gait_freq_range_hz"])
        synth["sensors"] = tuple(synth["sensors"])
        D.SynthConfig(**synth).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    cfg["subjects"] = [str(s) for s in cfg["subjects"]]
    unknown = [d for d in cfg["detectors"] if d not in DETECTORS]
    if unknown:
        raise UsageError(f"unknown detectors {unknown}; choose from {list(DETECTORS)}")
    bad_sensors = [s for s in cfg["sensors"] if s not in D.SENSORS]
    if bad_sensors:
        raise UsageError(f"unknown sensors {bad_sensors}; choose from {list(D.SENSORS)}")
    if int(cfg["jobs"]) < 1:
        raise UsageError("jobs must be >= 1")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:12]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def synth_config(cfg: dict) -> D.SynthConfig:
    s = dict(cfg["synth"])
    s["gait_freq_range_hz"] = tuple(s["gait_freq_range_hz"])
    s["sensors"] = tuple(s["sensors"])
    return D.SynthConfig(**s)


# --- file helpers -----------------------------------------------------------------------


def atomic_write(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(payload.encode("utf-8") if isinstance(payload, str) else payload)
    os.replace(tmp, path)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_writable(path, force: bool):
    if Path(path).exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _offsets_path(cache) -> Path:
    return Path(str(cache) + ".means")


def write_dataset(path, ws: D.WindowSet) -> None:
    """Write the window cache plus a sidecar with the per-window means removed by centering."""
    D.write_cache(path, ws)
    if ws.offsets is not None:
        atomic_write(_offsets_path(path), np.asarray(ws.offsets, dtype="<f8").tobytes())


def read_dataset(path) -> D.WindowSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    ws = D.read_cache(path)
    side = _offsets_path(path)
    if side.exists():
        off = np.frombuffer(side.read_bytes(), dtype="<f8")
        if off.size == 3 * len(ws):
            ws.offsets = off.reshape(-1, 3).copy()
    return ws


# --- tables -----------------------------------------------------------------------------------


def _metric_columns(detector: str):
    cols = list(TABLE_COLUMNS)
    if detector != "threshold":
        cols.append(("pr_auc", "PR-AUC"))
    return cols


def fold_table_csv(detector: str, rows: dict, agg: dict) -> str:
    """Per-fold percentages (one decimal), subjects ascending, then mean and std rows."""
    cols = _metric_columns(detector)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Subject"] + [label for _, label in cols])
    for subject in sorted(rows, key=D.subject_sort_key):
        w.writerow([subject] + [ME.format_percent(rows[subject].get(k)) for k, _ in cols])
    w.writerow(["mean"] + [ME.format_percent(agg[k]["mean"]) for k, _ in cols])
    w.writerow(["std"] + [ME.format_percent(agg[k]["std"]) for k, _ in cols])
    return buf.getvalue()


def aggregate_table_csv(summary: dict) -> str:
    """One row per detector, mean and std columns, PR-AUC blank for the threshold detector."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["Model"]
    for _, label in TABLE_COLUMNS + (("pr_auc", "PR-AUC"),):
        header += [f"{label} mean", f"{label} std"]
    w.writerow(header)
    for det in DETECTORS:
        if det not in summary:
            continue
        agg = summary[det]["aggregate"]
        row = [DETECTOR_LABELS[det]]
        for key, _ in TABLE_COLUMNS + (("pr_auc", "PR-AUC"),):
            row += [ME.format_percent(agg[key]["mean"]), ME.format_percent(agg[key]["std"])]
        w.writerow(row)
    return buf.getvalue()


# --- evaluation helpers ------------------------------------------------------------------------


def evaluate_scores(labels, scores, tau) -> dict:
    pred = (np.asarray(scores) >= tau).astype(np.int8)
    pr_auc = None
    y = np.asarray(labels)
    if 0 < y.sum() < len(y):
        pr_auc = ME.average_precision(scores, y)
    return ME.compute_metrics(ME.confusion(y, pred), pr_auc).to_dict()


def evaluate_threshold(model: TH.ThresholdModel, ws: D.WindowSet, raw: bool) -> dict:
    pred = TH.predict(TH.detector_input(ws, raw), model)
    return ME.compute_metrics(ME.confusion(ws.labels, pred)).to_dict()


_FOLD_MEMO = {}


def _folds_for(cache: str, cfg: dict):
    key = (cache, tuple(cfg["subjects"]), cfg["sensors"][0], cfg["seed"])
    if key not in _FOLD_MEMO:
        ws = read_dataset(cache)
        sensor = cfg["sensors"][0]
        if len(cfg["sensors"]) != 1:
            log.warning("LOSO uses one sensor; taking %s", sensor)
        present = set(ws.select(sensors=[sensor]).subjects.tolist())
        for s in cfg["subjects"]:
            if s not in present:
                raise EmptySubjectError(f"subject {s} has no {sensor} windows in {cache}")
        _FOLD_MEMO.clear()
        _FOLD_MEMO[key] = D.loso_folds(ws, cfg["subjects"], cfg["seed"], sensor)
    return _FOLD_MEMO[key]


def _run_fold(task):
    """Train and evaluate one detector on one LOSO fold; artifacts go under ``run_dir``."""
    detector, fold_index, cache, cfg, run_dir = task
    run_dir = Path(run_dir)
    folds = _folds_for(cache, cfg)
    fold = folds[fold_index]
    subject = fold.subject
    out = {"detector": detector, "subject": subject, "artifacts": {}}
    try:
        det_dir = run_dir / detector
        if detector == "threshold":
            raw = bool(cfg["threshold"]["raw"])
            model = TH.fit_threshold(TH.detector_input(fold.train, raw), fold.train.labels)
            out["metrics"] = evaluate_threshold(model, fold.test, raw)
            out["tau"] = model.tau
            out["fit_f1"] = model.fit_f1
            path = det_dir / f"threshold_{subject}.txt"
            atomic_write(path, model.dumps() + "\n")
            out["artifacts"]["model"] = path
        else:
            spec = M.build_spec(detector)
            tc = T.TrainConfig.from_dict(cfg["train"])
            result = T.train(spec, fold, tc, fold_index=fold_index)
            scores = M.predict_proba(spec, result.params, fold.test.data)[:, 1]
            out["metrics"] = evaluate_scores(fold.test.labels, scores, result.tau_star)
            out["tau"] = result.tau_star
            out["best_epoch"] = result.best_epoch
            out["epochs"] = len(result.history)
            model_path = det_dir / f"fold_{subject}.gmdl"
            atomic_write(model_path, R.export(spec, result.params, result.tau_star))
            hist_path = det_dir / f"history_{subject}.csv"
            atomic_write(hist_path, result.history_csv())
            out["artifacts"]["model"] = model_path
            out["artifacts"]["history"] = hist_path
        metrics_path = det_dir / f"metrics_{subject}.json"
        atomic_write(metrics_path, canonical_json({k: v for k, v in out.items() if k != "artifacts"}))
        out["artifacts"]["metrics"] = metrics_path
        out["artifacts"] = {k: str(Path(v).relative_to(run_dir)) for k, v in out["artifacts"].items()}
    except Exception as exc:  # a failed fold is recorded, the run continues
        log.exception("fold %s of %s failed", subject, detector)
        out = {"detector": detector, "subject": subject, "error": f"{type(exc).__name__}: {exc}"}
    return out


def new_run_dir(output_dir, chash: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    base = Path(output_dir) / f"{stamp}-{chash}"
    path, n = base, 1
    while path.exists():
        path = Path(f"{base}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_train_loso(cfg: dict, run_dir=None) -> tuple:
    """Run every selected detector on every LOSO fold.

    Returns ``(run_dir, aggregate, manifest)``. Fold results are keyed by
    subject, so output does not depend on execution order or ``jobs``.
    """
    cache = cfg["cache"]
    if not cache:
        raise UsageError("no dataset cache configured (set 'cache' or pass --cache)")
    if not Path(cache).exists():
        raise FileNotFoundError(cache)
    chash = config_hash(cfg)
    run_dir = Path(run_dir) if run_dir else new_run_dir(cfg["output_dir"], chash)
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(run_dir / "config.json", canonical_json(cfg))
    folds = _folds_for(str(cache), cfg)
    order = [d for d in DETECTORS if d in cfg["detectors"]]
    tasks = [(d, i, str(cache), cfg, str(run_dir)) for d in order for i in range(len(folds))]
    results = _map(_run_fold, tasks, int(cfg["jobs"]))

    summary, failures, artifacts, tables = {}, [], {}, []
    for det in order:
        rows = {}
        extra = {}
        for r in results:
            if r["detector"] != det:
                continue
            if "error" in r:
                failures.append({"detector": det, "subject": r["subject"], "error": r["error"]})
                continue
            rows[r["subject"]] = r["metrics"]
            extra[r["subject"]] = {k: r[k] for k in ("tau", "best_epoch", "epochs", "fit_f1") if k in r}
            artifacts.setdefault(det, {})[r["subject"]] = r["artifacts"]
        ordered = {s: rows[s] for s in sorted(rows, key=D.subject_sort_key)}
        agg = ME.aggregate(list(ordered.values()))
        summary[det] = {
            "label": DETECTOR_LABELS[det],
            "folds": {s: {**ordered[s], **extra[s]} for s in ordered},
            "aggregate": agg,
        }
        for name, payload in ((f"{det}_folds.csv", fold_table_csv(det, ordered, agg)),
                              (f"{det}_folds.json", canonical_json(summary[det]))):
            atomic_write(run_dir / name, payload)
            tables.append(name)
    aggregate = {"config_hash": chash, "detectors": summary, "failures": failures, "notes": REPORT_NOTES}
    atomic_write(run_dir / "aggregate.json", canonical_json(aggregate))
    atomic_write(run_dir / "aggregate.csv", aggregate_table_csv(summary))
    tables += ["aggregate.json", "aggregate.csv", "config.json"]
    manifest = build_manifest(run_dir, chash, artifacts, tables, failures)
    atomic_write(run_dir / "manifest.json", canonical_json(manifest))
    return run_dir, aggregate, manifest


def build_manifest(run_dir, chash, artifacts, tables, failures) -> dict:
    run_dir = Path(run_dir)
    hashes = {}
    for rel in tables + [p for det in artifacts.values() for a in det.values() for p in a.values()]:
        path = run_dir / rel
        if not path.exists():
            raise RuntimeError(f"manifest references missing file {path}")
        hashes[rel] = sha256_file(path)
    return {
        "toolkit_version": __version__,
        "config_hash": chash,
        "folds": artifacts,
        "tables": tables,
        "sha256": hashes,
        "failures": failures,
    }


def verify_manifest(run_dir) -> list:
    """Re-open every artifact listed in ``manifest.json``; returns the problems found."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    problems = []
    for rel, digest in manifest["sha256"].items():
        path = run_dir / rel
        if not path.exists():
            problems.append(f"missing {rel}")
            continue
        if sha256_file(path) != digest:
            problems.append(f"hash mismatch {rel}")
        if rel.endswith(".gmdl"):
            try:
                R.load_file(path)
            except R.ModelFormatError as exc:
                problems.append(f"{rel}: {exc}")
    return problems


def run_eval_sensors(cfg: dict, run_dir=None) -> tuple:
    """Train once on a stratified 60/20/20 split of all sensors; evaluate per sensor and overall."""
    cache = cfg["cache"]
    if not cache:
        raise UsageError("no dataset cache configured (set 'cache' or pass --cache)")
    ws = read_dataset(cache)
    sensors = list(cfg["sensors"])
    present = set(ws.sensors.tolist())
    missing = [s for s in sensors if s not in present]
    if missing:
        raise D.DataError(f"cache {cache} has no windows for sensors {missing}")
    ws = ws.select(subjects=cfg["subjects"], sensors=sensors)
    split = D.stratified_split(ws, cfg["seed"])
    chash = config_hash(cfg)
    run_dir = Path(run_dir) if run_dir else new_run_dir(cfg["output_dir"], chash)
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(run_dir / "config.json", canonical_json(cfg))
    groups = [(s, np.flatnonzero(split.test.sensors == s)) for s in sensors]
    groups.append(("all", np.arange(len(split.test))))
    table = {}
    for det in [d for d in DETECTORS if d in cfg["detectors"]]:
        rows = {}
        if det == "threshold":
            raw = bool(cfg["threshold"]["raw"])
            model = TH.fit_threshold(TH.detector_input(split.train, raw), split.train.labels)
            for name, idx in groups:
                rows[name] = evaluate_threshold(model, split.test.subset(idx), raw)
            rows["_tau"] = model.tau
        else:
            spec = M.build_spec(det)
            result = T.train(spec, split, T.TrainConfig.from_dict(cfg["train"]), fold_index=0)
            scores = M.predict_proba(spec, result.params, split.test.data)[:, 1]
            for name, idx in groups:
                rows[name] = evaluate_scores(split.test.labels[idx], scores[idx], result.tau_star)
            rows["_tau"] = result.tau_star
            atomic_write(run_dir / f"{det}.gmdl", R.export(spec, result.params, result.tau_star))
        table[det] = rows
    payload = {"config_hash": chash, "sensors": sensors, "detectors": table}
    atomic_write(run_dir / "sensors.json", canonical_json(payload))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Model", "Sensor"] + [label for _, label in TABLE_COLUMNS])
    for det, rows in table.items():
        for name, _ in groups:
            label = "All" if name == "all" else D.SENSOR_NAMES[name]
            w.writerow([DETECTOR_LABELS[det], label] + [ME.format_percent(rows[name][k]) for k, _ in TABLE_COLUMNS])
    atomic_write(run_dir / "sensors.csv", buf.getvalue())
    return run_dir, payload


# --- commands -----------------------------------------------------------------------------------


def _load_cfg(args) -> dict:
    overrides = read_config_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "cache", None):
        overrides["cache"] = args.cache
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if getattr(args, "jobs", None):
        overrides["jobs"] = args.jobs
    if getattr(args, "detectors", None):
        overrides["detectors"] = args.detectors
    if getattr(args, "sensors", None):
        overrides["sensors"] = args.sensors
    if getattr(args, "subjects", None):
        overrides["subjects"] = args.subjects
    return overrides


def cmd_synth(args) -> int:
    overrides = _load_cfg(args)
    synth = overrides.setdefault("synth", {})
    for key in ("n_subjects", "windows_per_class", "noise_std", "label_noise"):
        value = getattr(args, key)
        if value is not None:
            synth[key] = value
    if args.synth_seed is not None:
        synth["seed"] = args.synth_seed
    if args.synth_sensors:
        synth["sensors"] = args.synth_sensors
    cfg = resolve_config(overrides)
    out = args.out or cfg["cache"]
    if not out:
        raise UsageError("pass --out or set 'cache' in the config")
    _check_writable(out, args.force)
    ws = D.synth_generate(synth_config(cfg))
    write_dataset(out, ws)
    n0, n1 = ws.class_counts()
    print(f"wrote {len(ws)} windows ({n1} gait, {n0} non_gait) to {out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    overrides = _load_cfg(args)
    if args.csv_dir:
        overrides.setdefault("prepare", {})["csv_dir"] = args.csv_dir
    cfg = resolve_config(overrides)
    p = cfg["prepare"]
    if not p["csv_dir"]:
        raise UsageError("pass --csv-dir or set prepare.csv_dir")
    out = args.out or cfg["cache"]
    if not out:
        raise UsageError("pass --out or set 'cache' in the config")
    _check_writable(out, args.force)
    sets = []
    print("subject,sensor,non_gait,gait")
    for subject in sorted(cfg["subjects"], key=D.subject_sort_key):
        ws = D.prepare_subject(p["csv_dir"], subject, cfg["sensors"], p["gait_activities"],
                               p["excluded_activities"], p["columns"] or None)
        if len(ws) == 0:
            raise EmptySubjectError(f"subject {subject} produced no windows")
        for sensor in cfg["sensors"]:
            n0, n1 = ws.select(sensors=[sensor]).class_counts()
            print(f"{subject},{sensor},{n0},{n1}")
        sets.append(ws)
    write_dataset(out, D.WindowSet.concat(sets))
    return EXIT_OK


def cmd_train_loso(args) -> int:
    cfg = resolve_config(_load_cfg(args))
    run_dir, aggregate, manifest = run_train_loso(cfg, args.run_dir)
    print(aggregate_table_csv(aggregate["detectors"]), end="")
    print(f"run directory: {run_dir}")
    if aggregate["failures"]:
        for f in aggregate["failures"]:
            print(f"FAILED {f['detector']} fold {f['subject']}: {f['error']}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_eval_sensors(args) -> int:
    overrides = _load_cfg(args)
    overrides.setdefault("sensors", list(D.SENSORS))
    cfg = resolve_config(overrides)
    run_dir, payload = run_eval_sensors(cfg, args.run_dir)
    print((run_dir / "sensors.csv").read_text(), end="")
    print(f"run directory: {run_dir}")
    return EXIT_OK


PROFILE_COLUMNS = (
    ("model", "Model"),
    ("params", "Params"),
    ("macs", "MACs"),
    ("flash_bytes", "Weights+format bytes"),
    ("peak_arena_bytes", "Arena bytes"),
    ("mean_latency_us", "Host mean latency (us)"),
    ("p95_latency_us", "Host p95 latency (us)"),
)


def cmd_profile(args) -> int:
    rows = [R.profile(R.load_file(p), args.reps) for p in args.models]
    if args.json:
        print(canonical_json(rows), end="")
        return EXIT_OK
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow([label for _, label in PROFILE_COLUMNS])
    for r in rows:
        w.writerow([f"{r[k]:.1f}" if isinstance(r[k], float) else r[k] for k, _ in PROFILE_COLUMNS])
    return EXIT_OK


def cmd_export(args) -> int:
    _check_writable(args.out, args.force)
    if args.fresh:
        spec = M.build_spec(args.fresh)
        payload = R.export(spec, M.init_params(spec, args.seed), args.tau)
    else:
        if not (args.manifest and args.detector and args.fold):
            raise UsageError("export needs --fresh MODEL or --manifest, --detector and --fold")
        manifest_path = Path(args.manifest)
        if not manifest_path.exists():
            raise FileNotFoundError(manifest_path)
        manifest = json.loads(manifest_path.read_text())
        try:
            rel = manifest["folds"][args.detector][str(args.fold)]["model"]
        except KeyError:
            raise UsageError(f"manifest has no model for {args.detector} fold {args.fold}") from None
        if not rel.endswith(".gmdl"):
            raise UsageError(f"{args.detector} does not produce a model binary")
        payload = (manifest_path.parent / rel).read_bytes()
        R.decode(payload)
    atomic_write(args.out, payload)
    print(f"wrote {len(payload)} bytes to {args.out}")
    return EXIT_OK


def read_window_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    try:
        values = [[float(c) for c in r] for r in rows]
    except ValueError:
        values = None
    if values is None:  # header row
        try:
            values = [[float(c) for c in r] for r in rows[1:]]
        except ValueError as exc:
            raise D.DataError(f"{path}: non-numeric value ({exc})") from None
    arr = np.asarray(values, dtype=np.float64) if values else np.zeros((0, 3))
    if arr.shape != (D.WINDOW, D.N_AXES):
        raise D.DataError(f"{path}: expected {D.WINDOW} rows x {D.N_AXES} columns, got {arr.shape}")
    return arr


def cmd_infer(args) -> int:
    rt = R.load_file(args.model)
    window = read_window_csv(args.window)
    if args.center:
        window = window - window.mean(axis=0)
    p, decision = rt.infer(np.ascontiguousarray(window, dtype=np.float32))
    print(json.dumps({"p_gait": p, "decision": "gait" if decision else "non_gait", "tau": rt.tau}))
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitsep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gaitsep {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cache=True):
        p.add_argument("--config", help="TOML or JSON experiment config")
        if cache:
            p.add_argument("--cache", help="window cache path (overrides config)")
        p.add_argument("--subjects", nargs="+", help="subject ids (overrides config)")
        p.add_argument("--sensors", nargs="+", choices=D.SENSORS, help="sensors (overrides config)")

    p = sub.add_parser("synth", help="generate a synthetic window cache")
    common(p, cache=False)
    p.add_argument("--out", help="output cache path (default: config 'cache')")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--windows-per-class", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--label-noise", type=float)
    p.add_argument("--synth-seed", type=int)
    p.add_argument("--synth-sensors", nargs="+", choices=D.SENSORS)
    p.add_argument("--force", action="store_true", help="overwrite an existing output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="build a window cache from sensor and annotation CSVs")
    common(p, cache=False)
    p.add_argument("--csv-dir")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-loso", help="leave-one-subject-out evaluation of every detector")
    common(p)
    p.add_argument("--detectors", nargs="+", choices=DETECTORS)
    p.add_argument("--jobs", type=int, help="parallel fold workers")
    p.add_argument("--output-dir")
    p.add_argument("--run-dir", help="exact run directory (default: <output_dir>/<timestamp>-<hash>)")
    p.set_defaults(func=cmd_train_loso)

    p = sub.add_parser("eval-sensors", help="train on all sensors, evaluate per sensor")
    common(p)
    p.add_argument("--detectors", nargs="+", choices=DETECTORS)
    p.add_argument("--output-dir")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_eval_sensors)

    p = sub.add_parser("profile", help="MACs, footprint and host latency of model binaries")
    p.add_argument("models", nargs="+")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("export", help="write a model binary from a run or a fresh initialization")
    p.add_argument("--manifest")
    p.add_argument("--detector", choices=M.MODEL_NAMES)
    p.add_argument("--fold", help="held-out subject id")
    p.add_argument("--fresh", choices=M.MODEL_NAMES, help="export an untrained model")
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("infer", help="classify one window CSV (60 rows x 3 columns)")
    p.add_argument("--model", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--center", action="store_true", help="subtract the per-axis mean first")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing file {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except EmptySubjectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_SUBJECT
    except (D.DataError, R.ModelFormatError) as exc:
        code = getattr(exc, "code", "DATA")
        print(f"error [{code}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
