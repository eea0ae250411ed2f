"""Batch command-line front end.

    icdfs synth    --config demo.cfg --seed 7 --out-dir run/
    icdfs encode   --admissions run/admissions.csv --deaths run/deaths.csv --out-dir run/
    icdfs select   --matrix run/matrix.txt --method cae,pfa --tree tree.csv --out-dir run/
    icdfs evaluate --matrix run/matrix.txt --selection run/selection_*.json --out-dir run/
    icdfs report   --in-dir run/ --out-dir run/

Every stage reads and writes plain files. Each invocation writes a
``manifest_<command>.json``; its hash (computed without the timings) is
embedded in every artifact of that invocation. Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import eval_report as er
from .cohort import EncodedDataset, SplitSpec, encode_cohort, load_admissions, load_deaths
from .errors import IcdfsError
from .icd_tree import load_sample_tree, parse_tree, sample_tree_path
from .methods import METHODS, UnknownMethod, method_options, named_seed, run_selection
from .selection import SelectionResult, atomic_write_text
from .synth import SynthConfig, generate_cohort

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    exit_code = EXIT_USAGE


# ---------------------------------------------------------------------------
# manifest and config
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    seeds: dict
    flags: dict = field(default_factory=dict)
    version: str = __version__
    timings: dict = field(default_factory=dict)

    def content(self) -> dict:
        d = asdict(self)
        d.pop("timings")
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        doc = {**asdict(self), "manifest_hash": self.hash}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / f"manifest_{self.command}.json"
        atomic_write_text(path, self.to_json())
        return path


def load_config(path) -> dict:
    """Flat ``key = value`` TOML file; keys may use ``-`` or ``_``."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise UsageError(f"config must be flat; found tables {nested}")
    return {k.replace("-", "_"): v for k, v in data.items()}


def effective(args, defaults: dict, config: dict) -> dict:
    """Defaults, then config file values, then explicit command-line flags."""
    out = dict(defaults)
    unknown = set(config) - set(defaults) - {"seed"}
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    out.update(config)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _seed(args, config) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(config.get("seed", 0))


def _input(path, role) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{role} file not found: {path}")
    return {"name": p.name, "sha256": file_sha256(p)}


def _tree(path):
    if path is None:
        return load_sample_tree(), {"name": "bundled:" + sample_tree_path().name,
                                    "sha256": file_sha256(sample_tree_path())}
    return parse_tree(Path(path)), _input(path, "tree")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    config = load_config(args.config)
    synth_defaults = {f.name: getattr(SynthConfig(), f.name) for f in fields(SynthConfig)}
    synth_defaults.pop("seed")
    eff = effective(args, {**synth_defaults, "tree": None}, config)
    seed = _seed(args, config)
    tree, tree_info = _tree(eff.pop("tree"))
    cfg = SynthConfig.from_mapping({**eff, "seed": named_seed(seed, "synth")})
    cohort = generate_cohort(tree, cfg)
    out = Path(args.out_dir)
    paths = cohort.write(out)
    manifest = RunManifest(
        command="synth",
        config=cfg.to_dict(),
        inputs={"tree": tree_info},
        seeds={"seed": seed, "synth": cfg.seed},
        flags={"window_days": 90, "horizon_days": 90},
        timings={"synth": time.perf_counter() - t0},
    )
    manifest.config["intercept"] = cohort.intercept
    manifest.write(out)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


ENCODE_DEFAULTS = {"admissions": None, "deaths": None, "tree": None, "out": None,
                   "split": 0.67, "split_unit": "record", "window_days": 90,
                   "horizon_days": 90, "strict": False}


def cmd_encode(args) -> int:
    t0 = time.perf_counter()
    config = load_config(args.config)
    eff = effective(args, ENCODE_DEFAULTS, config)
    if not eff["admissions"] or not eff["deaths"]:
        raise UsageError("encode needs --admissions and --deaths")
    seed = _seed(args, config)
    tree, tree_info = _tree(eff["tree"])
    inputs = {"admissions": _input(eff["admissions"], "admissions"),
              "deaths": _input(eff["deaths"], "deaths"), "tree": tree_info}
    stats = {}
    records = load_admissions(eff["admissions"], tree=tree, strict=bool(eff["strict"]), stats=stats)
    deaths = load_deaths(eff["deaths"])
    spec = SplitSpec(float(eff["split"]), named_seed(seed, "split"), eff["split_unit"])
    ds = encode_cohort(records, deaths, tree, spec, int(eff["window_days"]), int(eff["horizon_days"]))
    out = Path(args.out_dir)
    matrix_path = Path(eff["out"]) if eff["out"] else out / "matrix.txt"
    manifest = RunManifest(
        command="encode",
        config={k: v for k, v in eff.items() if k not in ("admissions", "deaths", "tree", "out")},
        inputs=inputs,
        seeds={"seed": seed, "split": spec.seed},
        flags={"split_unit": spec.unit},
        timings={"encode": time.perf_counter() - t0},
    )
    ds.extra.update({"manifest_hash": manifest.hash, "ingest": stats})
    matrix_path.parent.mkdir(parents=True, exist_ok=True)
    ds.save(matrix_path)
    manifest.write(out)
    n_pos = int(ds.labels.sum())
    print(f"wrote {matrix_path} ({ds.matrix.n_rows} rows x {ds.matrix.n_cols} columns, "
          f"{n_pos} positive; train {len(ds.train_rows)} / test {len(ds.test_rows)})")
    return EXIT_OK


SELECT_DEFAULTS = {"matrix": None, "method": None, "n_best": 100, "tree": None,
                   "epochs": None, "learning_rate": None, "batch_size": None, "dtype": None,
                   "k": None, "K": None, "max_samples": None, "n_components": None,
                   "batch_rows": None, "alpha": None, "beta": None, "curve": False}


def _parse_methods(value) -> list[str]:
    if value is None:
        raise UsageError(f"--method is required; valid methods: {', '.join(METHODS)}")
    items = value if isinstance(value, list) else [value]
    methods = []
    for item in items:
        methods.extend(m.strip() for m in str(item).split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise UsageError(str(UnknownMethod(m)))
    return list(dict.fromkeys(methods))


def _select_job(job):
    method, matrix_path, n_best, seed, tree_path, options, manifest_hash, out_path = job
    ds = EncodedDataset.load(matrix_path)
    tree = parse_tree(Path(tree_path)) if tree_path else None
    X = ds.matrix.take_rows(ds.train_rows)
    res = run_selection(method, X, n_best, seed, tree, **options)
    res.fingerprint = ds.matrix.fingerprint()
    res.manifest_hash = manifest_hash
    res.save(out_path)
    return method, str(out_path), len(res.selected), res.diagnostics.get("duplicates_merged")


def cmd_select(args) -> int:
    t0 = time.perf_counter()
    config = load_config(args.config)
    eff = effective(args, SELECT_DEFAULTS, config)
    methods = _parse_methods(eff["method"])
    if not eff["matrix"]:
        raise UsageError("select needs --matrix")
    if "cae-weighted" in methods and not eff["tree"]:
        raise UsageError("--method cae-weighted needs --tree (weights come from code depths)")
    seed = _seed(args, config)
    inputs = {"matrix": _input(eff["matrix"], "matrix")}
    if eff["tree"]:
        inputs["tree"] = _input(eff["tree"], "tree")
    out = Path(args.out_dir)
    seeds = {"seed": seed}
    jobs = []
    tunables = ("epochs", "learning_rate", "batch_size", "dtype", "k", "K", "max_samples",
                "n_components", "batch_rows", "alpha", "beta")
    for m in methods:
        allowed = method_options(m)
        options = {k: eff[k] for k in tunables if eff[k] is not None and k in allowed}
        if eff["curve"] and "curve_path" in allowed:
            options["curve_path"] = str(out / f"curve_{m}.csv")
        seeds[m] = named_seed(seed, "gumbel" if m.startswith("cae") else m)
        jobs.append([m, eff["matrix"], int(eff["n_best"]), seeds[m], eff["tree"], options, None,
                     out / f"selection_{m}.json"])
    manifest = RunManifest(
        command="select",
        config={k: v for k, v in eff.items() if k not in ("matrix", "tree")} | {"method": methods},
        inputs=inputs,
        seeds=seeds,
        flags={"graph_axis": "samples", "weight_normalization": "none"},
    )
    for job in jobs:
        job[6] = manifest.hash
    out.mkdir(parents=True, exist_ok=True)
    if args.jobs and args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_select_job, [tuple(j) for j in jobs]))
    else:
        results = [_select_job(tuple(j)) for j in jobs]
    manifest.timings = {"select": time.perf_counter() - t0}
    manifest.write(out)
    for m, path, n_sel, merged in results:
        extra = f", {merged} duplicate picks merged" if merged is not None else ""
        print(f"{m}: {n_sel} features -> {path}{extra}")
    return EXIT_OK


EVAL_DEFAULTS = {"matrix": None, "selection": None, "tree": None, "skip_outcome": False,
                 "epochs": 100, "outcome_epochs": 100, "dtype": "float64", "top_k": 20}


def _write_tables(out: Path, recon, outcome, depth_rows, hist_rows, prevalence=None):
    er.write_text(out / "table1.csv", er.table1_csv(recon))
    if outcome:
        er.write_text(out / "table2.csv", er.table2_csv(outcome))
    er.write_text(out / "histogram.csv", "".join(
        er.histogram_csv(e, c, m) if i == 0 else er.histogram_csv(e, c, m).split("\n", 1)[1]
        for i, (m, e, c) in enumerate(hist_rows)))
    if depth_rows:
        er.write_text(out / "depth.csv", er.depth_csv(depth_rows))
    if prevalence is not None:
        er.write_text(out / "prevalence.csv", er.prevalence_csv(prevalence))


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    config = load_config(args.config)
    eff = effective(args, EVAL_DEFAULTS, config)
    if not eff["matrix"] or not eff["selection"]:
        raise UsageError("evaluate needs --matrix and --selection")
    seed = _seed(args, config)
    sel_paths = eff["selection"] if isinstance(eff["selection"], list) else [eff["selection"]]
    inputs = {"matrix": _input(eff["matrix"], "matrix")}
    for i, p in enumerate(sel_paths):
        inputs[f"selection{i}"] = _input(p, "selection")
    tree = None
    if eff["tree"]:
        tree, inputs["tree"] = _tree(eff["tree"])
    ds = EncodedDataset.load(eff["matrix"])
    sp_ = ds.split()
    cfg = er.EvalConfig(epochs=int(eff["epochs"]), outcome_epochs=int(eff["outcome_epochs"]),
                        dtype=eff["dtype"], seed=named_seed(seed, "dropout"),
                        upsample_seed=named_seed(seed, "upsample"))
    manifest = RunManifest(
        command="evaluate",
        config={k: v for k, v in eff.items() if k not in ("matrix", "selection", "tree")},
        inputs=inputs,
        seeds={"seed": seed, "dropout": cfg.seed, "upsample": cfg.upsample_seed},
        flags={"threshold": cfg.threshold, "split_unit": ds.spec.unit},
    )
    out = Path(args.out_dir)
    recon_all, outcome_all, depth_rows, hist_rows = [], [], [], []
    for p in sel_paths:
        sel = SelectionResult.load(p)
        sel.fingerprint = sel.fingerprint or ds.matrix.fingerprint()
        recon = er.reconstruct_eval(sel, sp_.train, sp_.test, cfg)
        outcome = None
        if not eff["skip_outcome"]:
            outcome = er.outcome_eval(sel, sp_.train, sp_.test,
                                      (sp_.train_labels, sp_.test_labels), cfg)
            outcome_all.append(outcome)
        recon_all.append(recon)
        edges, counts = er.accuracy_histogram(recon.per_feature_accuracy)
        hist_rows.append((sel.method, edges, counts))
        extra = {"manifest_hash": manifest.hash, "selection_manifest_hash": sel.manifest_hash}
        if tree is not None:
            ds_sum = er.depth_sum(sel, tree, ds.matrix.feature_index)
            depth_rows.append((sel.method, len(sel.selected), ds_sum))
            extra["depth_sum"] = ds_sum
        extra["histogram"] = {"edges": edges, "counts": counts}
        er.write_text(out / f"report_{sel.method}.json", er.report_json(recon, outcome, extra))
    prevalence = er.prevalence_report(ds.matrix, int(eff["top_k"]))
    _write_tables(out, recon_all, outcome_all, depth_rows, hist_rows, prevalence)
    manifest.timings = {"evaluate": time.perf_counter() - t0}
    manifest.write(out)
    for r in recon_all:
        print(f"{r.method}: mean accuracy {r.mean_accuracy:.5f} (baseline "
              f"{r.baseline_mean_accuracy:.5f}), BCE {r.bce:.5f}, p = {r.p_value:.3g}")
    for o in outcome_all:
        print(f"{o.method}: accuracy {o.accuracy:.4f}, F1 {o.f1:.4f}, recall {o.recall:.4f}, "
              f"precision {o.precision:.4f}")
    return EXIT_OK


def _recon_from_dict(d) -> er.ReconReport:
    return er.ReconReport(
        per_feature_accuracy=d["per_feature_accuracy"], mean_accuracy=d["mean_accuracy"],
        bce=d["bce"], baseline_per_feature_accuracy=d["baseline_per_feature_accuracy"],
        baseline_mean_accuracy=d["baseline_mean_accuracy"], baseline_bce=d["baseline_bce"],
        t_statistic=d["t_statistic"] if d["t_statistic"] is not None else float("nan"),
        p_value=d["p_value"], zero_variance=d["zero_variance"], n_selected=d["n_selected"],
        method=d["method"], seed=d["seed"], fingerprint=d["fingerprint"])


def _outcome_from_dict(d) -> er.OutcomeReport:
    keys = ("accuracy", "f1", "recall", "precision", "tp", "fp", "tn", "fn", "majority_rate",
            "n_train_upsampled", "method", "seed", "fingerprint")
    return er.OutcomeReport(**{k: d[k] for k in keys})


def cmd_report(args) -> int:
    paths = list(args.reports or [])
    if args.in_dir:
        paths += sorted(glob.glob(str(Path(args.in_dir) / "report_*.json")))
    if not paths:
        raise UsageError("report needs --reports or an --in-dir holding report_*.json")
    recon, outcome, depth_rows, hist_rows = [], [], [], []
    for p in paths:
        doc = json.loads(Path(p).read_text(encoding="utf-8"))
        if doc.get("format") != "icdfs-report/1":
            raise UsageError(f"{p} is not an evaluation report")
        r = _recon_from_dict(doc["reconstruction"])
        recon.append(r)
        if doc.get("outcome"):
            outcome.append(_outcome_from_dict(doc["outcome"]))
        if "depth_sum" in doc:
            depth_rows.append((r.method, r.n_selected, doc["depth_sum"]))
        edges, counts = er.accuracy_histogram(r.per_feature_accuracy)
        hist_rows.append((r.method, edges, counts))
    _write_tables(Path(args.out_dir), recon, outcome, depth_rows, hist_rows)
    sys.stdout.write(er.table1_csv(recon))
    if outcome:
        sys.stdout.write(er.table2_csv(outcome))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="top-level seed (default 0)")
    common.add_argument("--config", default=None, help="flat key = value TOML file")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--out-dir", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="icdfs", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"icdfs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--n-patients", type=int, default=None)
    p.add_argument("--tree", default=None, help="ICD tree CSV (default: bundled sample)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", parents=[common], help="aggregate, label, encode and split")
    p.add_argument("--admissions", default=None)
    p.add_argument("--deaths", default=None)
    p.add_argument("--tree", default=None, help="ICD tree CSV (default: bundled sample)")
    p.add_argument("--out", default=None, help="matrix path (default OUT_DIR/matrix.txt)")
    p.add_argument("--split", type=float, default=None, help="train fraction (default 0.67)")
    p.add_argument("--split-unit", choices=("record", "patient"), default=None)
    p.add_argument("--window-days", type=int, default=None)
    p.add_argument("--horizon-days", type=int, default=None)
    p.add_argument("--strict", action="store_true", default=None,
                   help="fail on codes missing from the tree")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("select", parents=[common], help="run feature selectors")
    p.add_argument("--matrix", default=None)
    p.add_argument("--method", action="append", default=None,
                   help=f"one of {', '.join(METHODS)}; repeat or comma-separate for several")
    p.add_argument("--n-best", type=int, default=None)
    p.add_argument("--tree", default=None, help="ICD tree CSV (required for cae-weighted)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--dtype", choices=("float64", "float32"), default=None)
    p.add_argument("--k", type=int, default=None, help="neighbours for ls/mcfs")
    p.add_argument("--K", type=int, default=None, help="eigenvectors for mcfs")
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--n-components", type=int, default=None)
    p.add_argument("--batch-rows", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--curve", action="store_true", default=None,
                   help="write the CAE training curve CSV")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", parents=[common], help="reconstruction and outcome evaluation")
    p.add_argument("--matrix", default=None)
    p.add_argument("--selection", nargs="+", default=None)
    p.add_argument("--tree", default=None, help="ICD tree CSV for depth sums")
    p.add_argument("--skip-outcome", action="store_true", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--outcome-epochs", type=int, default=None)
    p.add_argument("--dtype", choices=("float64", "float32"), default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="collect report JSONs into tables")
    p.add_argument("--reports", nargs="+", default=None)
    p.add_argument("--in-dir", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def _fail(kind, code, message, parser=None):
    if parser is not None and code == EXIT_USAGE:
        parser.print_usage(sys.stderr)
    line = {"error": kind, "exit_code": code, "message": message}
    sys.stderr.write(json.dumps(line, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", EXIT_USAGE, str(exc), sub)
    except IcdfsError as exc:
        return _fail(type(exc).__name__, exc.exit_code, str(exc))
    except (FileNotFoundError, IsADirectoryError) as exc:
        return _fail(type(exc).__name__, EXIT_DATA, str(exc))
    except (KeyError, ValueError, TypeError) as exc:
        return _fail(type(exc).__name__, EXIT_USAGE, str(exc), sub)


if __name__ == "__main__":
    sys.exit(main())
