"""Command-line front end.

Subcommands::

    mvwarp generate --output DIR [--config FILE] [--seed S] [key=value ...]
    mvwarp fit DATASET --output DIR [--method M] [key=value ...]
    mvwarp score FITDIR --output DIR [--dataset DATASET]
    mvwarp sweep --output DIR [--jobs J] [key=value ...]

Configuration files are INI files with ``[generate]``, ``[fit]`` and
``[sweep]`` sections. Overrides are ``section.key=value`` or a bare ``key``
when it belongs to exactly one section; overrides win over the file.

Exit codes: 0 success, 1 fit failure, 2 invalid input, 3 partial sweep.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (BenchRecord, GenConfig, SWEEP_AXES, generate, run_sweep,
                    score_estimate, summarize)
from .pipeline import METHODS, FitConfig, FitError, fit
from .warpsig import MultiViewData

logger = logging.getLogger("mvwarp")

FORMAT_VERSION = 1
MAGIC = b"MVW1"
EXIT_OK, EXIT_FIT, EXIT_INPUT, EXIT_PARTIAL = 0, 1, 2, 3


class InputError(Exception):
    """Bad configuration or unreadable / inconsistent input files."""


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass(frozen=True)
class SweepConfig:
    axis: str = "subjects"
    values: tuple = (3, 5, 8)
    methods: tuple = ("mvicad2", "mvica", "groupica")
    n_seeds: int = 10
    seed0: int = 0

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be positive")


SECTIONS = {"generate": GenConfig, "fit": FitConfig, "sweep": SweepConfig}


def _parse_value(text, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_parse_item(t) for t in items)
    return text


def _parse_item(text):
    # sweep values: ints, floats or "a:b" pairs for the joint warp axis
    if ":" in text:
        return tuple(float(t) for t in text.split(":"))
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def _resolve_key(key):
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise InputError(f"unknown section {section!r} in override {key!r}")
        if name not in _field_names(SECTIONS[section]):
            raise InputError(f"unknown key {name!r} in section [{section}]")
        return section, name
    owners = [s for s, cls in SECTIONS.items() if key in _field_names(cls)]
    if not owners:
        raise InputError(f"unknown key {key!r}")
    if len(owners) > 1:
        raise InputError(f"ambiguous key {key!r}; prefix it with one of {owners}")
    return owners[0], key


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def load_config(path=None, overrides=(), seed=None, method=None):
    """Resolved ``{section: config object}`` from a file and overrides."""
    raw = {s: {} for s in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise InputError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SECTIONS:
                raise InputError(f"unknown section [{section}] in {path}")
            for key, value in parser[section].items():
                raw[section][_resolve_key(f"{section}.{key}")[1]] = value
    for item in overrides:
        if "=" not in item:
            raise InputError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = _resolve_key(key.strip())
        raw[section][name] = value
    if seed is not None:
        raw["generate"]["seed"] = str(seed)
        raw["fit"]["seed"] = str(seed)
        raw["sweep"]["seed0"] = str(seed)
    if method is not None:
        raw["fit"]["method"] = method

    out = {}
    for section, cls in SECTIONS.items():
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, text in raw[section].items():
            try:
                kwargs[name] = _parse_value(text, defaults[name])
            except ValueError as exc:
                raise InputError(f"[{section}] {name}: {exc}") from exc
        try:
            out[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise InputError(f"[{section}]: {exc}") from exc
    return out


def _config_dict(obj):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(obj).items()}


def _provenance(**configs):
    return {"library_version": __version__,
            "config": {k: _config_dict(v) for k, v in configs.items()}}


# ---------------------------------------------------------------------------
# array files


def write_binary(path, array, meta=None):
    """Write ``array`` in the ``MVW1`` container."""
    array = np.ascontiguousarray(array, dtype="<f8")
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(array.tobytes(order="C"))


def read_binary(path):
    """Inverse of :func:`write_binary`; returns ``(array, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise InputError(f"{path}: not an MVW1 file")
    try:
        (ndim,) = struct.unpack_from("<I", data, 4)
        off = 8
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        (meta_len,) = struct.unpack_from("<I", data, off)
        off += 4
        meta = json.loads(data[off:off + meta_len].decode())
        off += meta_len
    except (struct.error, ValueError) as exc:
        raise InputError(f"{path}: corrupt header ({exc})") from exc
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - off != 8 * count:
        raise InputError(f"{path}: expected {count} values, found {(len(data) - off) // 8}")
    arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
    return arr.astype(float), meta


def write_text(path, array, meta=None):
    """Delimiter-separated text; the shape and provenance go in ``#`` lines."""
    array = np.asarray(array, dtype=float)
    shape = array.shape
    flat = array.reshape(-1, shape[-1]) if array.ndim > 1 else array.reshape(1, -1)
    header = f"shape: {json.dumps(list(shape))}\nmeta: {json.dumps(meta or {}, sort_keys=True)}"
    np.savetxt(path, flat, fmt="%.17g", header=header)


def read_text(path):
    shape = None
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if body.startswith("shape:"):
                shape = tuple(json.loads(body[6:]))
            elif body.startswith("meta:"):
                meta = json.loads(body[5:])
    try:
        arr = np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise InputError(f"{path}: header shape {shape} does not match {arr.size} values")
        arr = arr.reshape(shape)
    return arr, meta


def write_array(path, array, meta=None, fmt="text"):
    (write_binary if fmt == "binary" else write_text)(path, array, meta)


def read_array(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_binary(path) if head == MAGIC else read_text(path)


def _suffix(fmt):
    return ".mvw" if fmt == "binary" else ".txt"


# ---------------------------------------------------------------------------
# datasets and bundles


def _prepare_output(out, force, marker):
    out = Path(out)
    if (out / marker).exists() and not force:
        raise InputError(f"{out / marker} exists; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_dataset(out, X, truth=None, fmt="text", provenance=None):
    """Write views, optional ground truth and ``manifest.json``."""
    out = Path(out)
    meta = provenance or {}
    sfx = _suffix(fmt)
    views = []
    for i in range(X.m):
        name = f"view_{i}{sfx}"
        write_array(out / name, X.views[i], meta, fmt)
        views.append(name)
    gt = {}
    if truth is not None:
        for key, arr in (("A", truth.A), ("tau", truth.tau_true), ("rho", truth.rho_true),
                         ("S", truth.S)):
            gt[key] = f"{key}{sfx}"
            write_array(out / gt[key], arr, meta, fmt)
        gt["tau_max"] = truth.config.tau_max * X.epoch_duration
        gt["rho_max"] = truth.config.rho_max
    manifest = {
        "format_version": FORMAT_VERSION,
        "m": X.m, "p": X.p, "n_total": X.n_total,
        "sample_period": X.sample_period, "n_epochs": X.n_epochs,
        "views": views, "ground_truth": gt or None, **meta,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def read_manifest(dataset):
    path = Path(dataset) / "manifest.json"
    if not path.exists():
        raise InputError(f"missing file: {path}")
    try:
        with open(path) as fh:
            man = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("format_version", "m", "p", "n_total", "sample_period", "views"):
        if key not in man:
            raise InputError(f"{path}: missing field {key!r}")
    if man["format_version"] != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported format_version {man['format_version']}")
    if len(man["views"]) != man["m"]:
        raise InputError(f"{path}: {len(man['views'])} view files listed for m={man['m']}")
    return man


def read_dataset(dataset):
    """``(MultiViewData, manifest)`` from a dataset directory."""
    man = read_manifest(dataset)
    shape = (man["p"], man["n_total"])
    views = []
    for name in man["views"]:
        arr, _ = read_array(Path(dataset) / name)
        if arr.shape != shape:
            raise InputError(f"{name}: shape {arr.shape}, manifest says {shape}")
        views.append(arr)
    try:
        X = MultiViewData(np.stack(views), man["sample_period"], man.get("n_epochs", 1))
    except ValueError as exc:
        raise InputError(f"{dataset}: {exc}") from exc
    return X, man


def read_ground_truth(dataset, man):
    gt = man.get("ground_truth")
    if not gt:
        return None
    out = {k: read_array(Path(dataset) / gt[k])[0] for k in ("A", "tau", "rho")}
    out["tau_max"] = float(gt["tau_max"])
    out["rho_max"] = float(gt["rho_max"])
    return out


def write_fit_bundle(out, res, dataset, fmt="text", provenance=None):
    out = Path(out)
    meta = provenance or {}
    sfx = _suffix(fmt)
    files = {}
    for key, arr in (("W", res.W.matrices), ("tau", res.warp.tau), ("rho", res.warp.rho),
                     ("aligned_sources", res.aligned_sources),
                     ("shared_sources", res.shared_sources),
                     ("loss_trace", np.asarray(res.loss_trace, dtype=float))):
        files[key] = f"{key}{sfx}"
        write_array(out / files[key], arr, meta, fmt)
    rep = res.report
    report = {
        "method": res.method,
        "dataset": str(Path(dataset).resolve()),
        "wall_time": res.wall_time,
        "converged_reason": rep.converged_reason if rep else "closed-form",
        "iterations": rep.iterations if rep else 0,
        "function_evals": rep.function_evals if rep else 0,
        "final_loss": float(res.loss_trace[-1]) if res.loss_trace else None,
        "tau_max": res.warp.tau_max, "rho_max": res.warp.rho_max,
        "files": files, **meta,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report


def read_fit_bundle(fitdir):
    path = Path(fitdir) / "report.json"
    if not path.exists():
        raise InputError(f"missing file: {path}")
    with open(path) as fh:
        report = json.load(fh)
    arrs = {k: read_array(Path(fitdir) / report["files"][k])[0] for k in ("W", "tau", "rho")}
    return arrs, report


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, cfgs):
    gen = cfgs["generate"]
    out = _prepare_output(args.output, args.force, "manifest.json")
    truth = generate(gen)
    write_dataset(out, truth.X, truth, args.format, _provenance(generate=gen))
    logger.info("wrote %d views of shape %s to %s", gen.m, truth.X.views.shape[1:], out)
    return EXIT_OK


def cmd_fit(args, cfgs):
    cfg = cfgs["fit"]
    X, _ = read_dataset(args.dataset)
    out = _prepare_output(args.output, args.force, "report.json")
    try:
        res = fit(X, cfg)
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        logger.error("fit failed: %s", exc)
        return EXIT_FIT
    rep = write_fit_bundle(out, res, args.dataset, args.format, _provenance(fit=cfg))
    logger.info("%s finished (%s) in %.2fs", cfg.method, rep["converged_reason"], res.wall_time)
    return EXIT_OK


def score_bundle(fitdir, dataset=None):
    """Metrics of a fit bundle against the dataset's ground truth."""
    arrs, report = read_fit_bundle(fitdir)
    dataset = dataset or report["dataset"]
    man = read_manifest(dataset)
    gt = read_ground_truth(dataset, man)
    if gt is None:
        return {"status": "metrics unavailable", "reason": "dataset has no ground truth"}
    W = arrs["W"]
    if W.shape != gt["A"].shape:
        raise InputError(f"W shape {W.shape} does not match A shape {gt['A'].shape}")

    sc = score_estimate(W, arrs["tau"], arrs["rho"], gt["A"], gt["tau"], gt["rho"],
                        gt["tau_max"], gt["rho_max"])
    return {"status": "ok", **sc}


def cmd_score(args, cfgs):
    out = _prepare_output(args.output, args.force, "scores.json")
    scores = score_bundle(args.fitdir, args.dataset)
    scores.update(_provenance())
    with open(out / "scores.json", "w") as fh:
        json.dump(scores, fh, indent=2, sort_keys=True)
    if scores["status"] != "ok":
        logger.warning("metrics unavailable: %s", scores["reason"])
    return EXIT_OK


ROW_FIELDS = [f.name for f in dataclasses.fields(BenchRecord)]


def _record_from_row(row):
    rec = BenchRecord(row["axis"], row["value"], row["method"], int(row["seed"]))
    for key in ("amari", "d_delays", "d_dilations", "init_amari", "init_d_delays",
                "init_d_dilations", "wall_time"):
        setattr(rec, key, float(row[key]))
    rec.status, rec.error = row["status"], row["error"]
    per_view = row["amari_per_view"]
    rec.amari_per_view = [float(a) for a in per_view.split(";")] if per_view else []
    return rec


def _write_table(path, rows, fields, comment):
    with open(path, "w", newline="") as fh:
        fh.write("".join(f"# {line}\n" for line in comment.splitlines()))
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def cmd_sweep(args, cfgs):
    sw, gen, fcfg = cfgs["sweep"], cfgs["generate"], cfgs["fit"]
    out = Path(args.output)
    ledger = out / "ledger.jsonl"
    prov = _provenance(sweep=sw, generate=gen, fit=fcfg)
    stamp = json.dumps(prov["config"], sort_keys=True)
    done = {}
    if ledger.exists() and not args.force:
        with open(ledger) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("config") != stamp:
            raise InputError(f"{out} holds a sweep with a different config; use --force")
        for entry in lines[1:]:
            done[(entry["value_index"], entry["seed"])] = entry["rows"]
        logger.info("resuming sweep: %d cells already done", len(done))
    else:
        if (out / "results.csv").exists() and not args.force:
            raise InputError(f"{out / 'results.csv'} exists; use --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)
        with open(ledger, "w") as fh:
            fh.write(json.dumps({"config": stamp}) + "\n")

    def on_cell(k, seed, recs):
        rows = [r.to_row() for r in recs]
        done[(k, seed)] = rows
        with open(ledger, "a") as fh:
            fh.write(json.dumps({"value_index": k, "seed": seed, "rows": rows}) + "\n")

    run_sweep(sw.axis, sw.values, sw.methods, sw.n_seeds, gen, fcfg, args.jobs,
              sw.seed0, skip=set(done), on_cell=on_cell)

    rows = []
    for k in range(len(sw.values)):
        for s in range(sw.n_seeds):
            rows.extend(done[(k, sw.seed0 + s)])
    comment = f"mvwarp {__version__}\nconfig: {stamp}"
    _write_table(out / "results.csv", rows, ROW_FIELDS, comment)
    summary = summarize([_record_from_row(r) for r in rows])
    _write_table(out / "summary.csv", summary, list(summary[0]) if summary else [], comment)
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        logger.warning("%d of %d runs failed", failed, len(rows))
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [generate], [fit], [sweep] sections")
    common.add_argument("--output", "-o", required=True, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--format", choices=("text", "binary"), default="text",
                        help="array file format")

    parser = argparse.ArgumentParser(prog="mvwarp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p_fit = sub.add_parser("fit", parents=[common], help="fit a method on a dataset")
    p_fit.add_argument("dataset")
    p_fit.add_argument("--method", choices=METHODS)
    p_score = sub.add_parser("score", parents=[common], help="score a fit against ground truth")
    p_score.add_argument("fitdir")
    p_score.add_argument("--dataset")
    p_sweep = sub.add_parser("sweep", parents=[common], help="run a benchmark sweep")
    p_sweep.add_argument("--jobs", type=int, default=1)
    for name, sp in sub.choices.items():
        sp.add_argument("overrides", nargs="*", metavar="key=value",
                        help="config overrides, e.g. fit.lam=0.5")
    return parser


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "score": cmd_score, "sweep": cmd_sweep}


def main(argv=None):
    level = os.environ.get("MVW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        # overrides may also follow options such as ``-o DIR``
        bad = [a for a in extra if a.startswith("-") or "=" not in a]
        if bad:
            parser.error(f"unrecognized arguments: {' '.join(bad)}")
        args.overrides = list(args.overrides) + extra
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfgs = load_config(args.config, args.overrides, args.seed, getattr(args, "method", None))
        return COMMANDS[args.command](args, cfgs)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
