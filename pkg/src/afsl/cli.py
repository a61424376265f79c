"""Command-line entry point: ``afsl {gen-data,train,eval,sweep,tables,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attacks import AttackError
from .autodiff import NonFiniteError, ZeroNormError
from .config import ConfigError, ExperimentConfig, RunSpec, config_hash, load_config, load_preset
from .data.distortions import DISTORTION_KINDS, SEVERITIES, DistortionError
from .data.io import DirectoryNotEmptyError, load_dataset, manifest_hash, save_dataset
from .data.synth import Dataset, DatasetConfigError, generate_dataset, split_by_video, split_leave_one_family_out
from .diagnostics import run_gradcheck_suite
from .evaluation import DistortionGrid, EvalError, EvalReport, parse_condition, robust_eval
from .models import ArchitectureError, load_checkpoint, save_checkpoint
from .training import TrainConfigError, train

logger = logging.getLogger("afsl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4
INCOMPLETE = "INCOMPLETE"


class MissingArtifactError(FileNotFoundError):
    pass


# -- helpers --------------------------------------------------------------------


def _experiment(args) -> ExperimentConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("config: give either --config or --preset, not both")
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifactError(f"config file not found: {path}")
        cfg = load_config(path)
    elif getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _require_dir(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what}: a path is required")
    p = Path(path)
    if not (p / "manifest.json").exists():
        raise MissingArtifactError(f"{what} not found: {p} has no manifest.json")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(fieldnames, rows, digest: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={digest}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise DirectoryNotEmptyError(f"{out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _split(dataset: Dataset, split: dict, seed: int):
    if split.get("kind") == "leave_one_out":
        return split_leave_one_family_out(dataset, split["family"], split.get("test_fraction", 0.3), seed)
    return split_by_video(dataset, split.get("test_fraction", 0.3), seed)


# -- gen-data -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _experiment(args)
    dcfg = cfg.dataset
    if args.seed is not None:
        dcfg = type(dcfg).from_dict({**dcfg.to_dict(), "seed": args.seed})
    out = Path(args.out or "data")
    digest = save_dataset(generate_dataset(dcfg), out, force=args.force)
    print(f"manifest_hash {digest}")
    print(f"config_hash {config_hash(dcfg.to_dict())}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def _train_one(run: RunSpec, cfg: ExperimentConfig, dataset: Dataset, dataset_hash: str, run_dir: Path) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    marker = run_dir / INCOMPLETE
    marker.write_text("training did not finish\n")
    digest = config_hash({"experiment": cfg.digest(), "run": run.to_dict()})
    _write_json(
        run_dir / "config.json",
        {"config_hash": digest, "experiment": cfg.to_dict(), "run": run.to_dict(), "dataset": dataset_hash},
    )
    train_set, test_set = _split(dataset, run.split, run.train.seed)
    with open(run_dir / "metrics.jsonl", "w") as log:

        def on_step(record):
            log.write(json.dumps({**record, "config_hash": digest}, sort_keys=True) + "\n")

        params, _ = train(train_set, run.train, on_step=on_step)
    params.config_hash = digest
    save_checkpoint(params, run_dir / "checkpoint")
    conditions = [c for c in cfg.conditions if parse_condition(c).kind != "transfer"] or ["clean"]
    if "clean" not in conditions:
        conditions = ["clean", *conditions]
    report = robust_eval(params, test_set, conditions, seed=run.train.seed, checkpoint=params.digest(), timestamp=True)
    report.dataset = dataset_hash
    report.extra.update({"config_hash": digest, "run": run.name, "regime": run.train.regime, "split": "test"})
    (run_dir / "report.json").write_text(report.to_json())
    marker.unlink()
    return {"run": run.name, **{r["condition"]: r["auc_video"] for r in report.results}}


def _train_worker(payload):
    run, cfg, data_dir, run_dir = payload
    dataset = load_dataset(data_dir) if data_dir else generate_dataset(cfg.dataset)
    dataset_hash = manifest_hash(data_dir) if data_dir else dataset.digest()
    return _train_one(run, cfg, dataset, dataset_hash, Path(run_dir))


def cmd_train(args) -> int:
    cfg = _experiment(args)
    if args.regime or args.steps:
        d = cfg.to_dict()
        if args.regime:
            d["train"]["regime"] = args.regime
        if args.steps:
            d["train"]["steps"] = args.steps
            for run in d["runs"]:
                run.setdefault("train", {})["steps"] = args.steps
        cfg = ExperimentConfig.from_dict(d)
    data_dir = str(_require_dir(args.data, "dataset")) if args.data else None
    out = Path(args.out or cfg.out)
    _prepare_out(out, args.force)
    runs = cfg.run_specs()
    single = len(runs) == 1 and not cfg.runs
    payloads = [(run, cfg, data_dir, str(out if single else out / run.name)) for run in runs]
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_train_worker, payloads))
    else:
        summaries = [_train_worker(p) for p in payloads]
    for s in summaries:
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in s.items()))
    return EXIT_OK


# -- eval / sweep ---------------------------------------------------------------


def _eval_split(args, checkpoint: Path, dataset: Dataset) -> tuple[Dataset, str]:
    if args.split == "all":
        return dataset, "all"
    run_cfg = checkpoint.parent / "config.json"
    if run_cfg.exists():
        run = json.loads(run_cfg.read_text())["run"]
        return _split(dataset, run["split"], int(run["train"]["seed"]))[1], "test"
    return split_by_video(dataset, 0.3, args.seed or 0)[1], "test"


def _load_ckpt(path: str | None, what: str):
    if path is None:
        raise ConfigError(f"{what}: a checkpoint path is required")
    p = Path(path)
    if not (p / "manifest.json").exists():
        raise MissingArtifactError(f"{what} not found: {p} has no manifest.json")
    return p, load_checkpoint(p)


def cmd_eval(args, parser) -> int:
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    parsed = [parse_condition(c, args.seed or 0) for c in conditions]
    if any(c.kind == "transfer" for c in parsed) and not args.surrogate:
        parser.error("the 'transfer' condition requires --surrogate CHECKPOINT")
    ckpt_path, params = _load_ckpt(args.checkpoint, "checkpoint")
    surrogate = _load_ckpt(args.surrogate, "surrogate")[1] if args.surrogate else None
    data_dir = _require_dir(args.data, "dataset")
    test_set, split = _eval_split(args, ckpt_path, load_dataset(data_dir))
    digest = config_hash(
        {"checkpoint": params.digest(), "dataset": manifest_hash(data_dir), "conditions": conditions,
         "surrogate": surrogate.digest() if surrogate else None, "seed": args.seed or 0, "split": split}
    )
    report = robust_eval(params, test_set, parsed, surrogate=surrogate, seed=args.seed or 0, jobs=args.jobs,
                         checkpoint=params.digest(), timestamp=True)
    report.dataset = manifest_hash(data_dir)
    report.extra.update({"config_hash": digest, "split": split})
    out = Path(args.out or "eval")
    _prepare_out(out, args.force)
    (out / "report.json").write_text(report.to_json())
    rows = [{k: r[k] for k in ("condition", "auc_video", "auc_clip", "accuracy")} for r in report.results]
    (out / "results.csv").write_text(_csv_text(["condition", "auc_video", "auc_clip", "accuracy"], rows, digest))
    for r in rows:
        print(f"{r['condition']:>24s}  auc_video={r['auc_video']:.4f}  auc_clip={r['auc_clip']:.4f}  acc={r['accuracy']:.4f}")
    return EXIT_OK


def grid_from_report(report: EvalReport, kinds=DISTORTION_KINDS, severities=SEVERITIES) -> DistortionGrid:
    auc = np.array([[report.result(f"{k}@{s}")["auc_video"] for s in severities] for k in kinds])
    return DistortionGrid(tuple(kinds), tuple(severities), auc)


def cmd_sweep(args) -> int:
    if args.distortions is None:
        raise ConfigError("sweep: --distortions is required (optionally followed by kind names)")
    kinds = tuple(args.distortions) or DISTORTION_KINDS
    unknown = set(kinds) - set(DISTORTION_KINDS)
    if unknown:
        raise ConfigError(f"distortions: unknown kind(s) {sorted(unknown)}; known: {list(DISTORTION_KINDS)}")
    ckpt_path, params = _load_ckpt(args.checkpoint, "checkpoint")
    data_dir = _require_dir(args.data, "dataset")
    test_set, split = _eval_split(args, ckpt_path, load_dataset(data_dir))
    conditions = [f"{k}@{s}" for k in kinds for s in SEVERITIES]
    digest = config_hash({"checkpoint": params.digest(), "dataset": manifest_hash(data_dir), "kinds": list(kinds), "split": split})
    report = robust_eval(params, test_set, conditions, seed=args.seed or 0, jobs=args.jobs, checkpoint=params.digest(), timestamp=True)
    report.dataset = manifest_hash(data_dir)
    report.extra.update({"config_hash": digest, "split": split})
    grid = grid_from_report(report, kinds)
    out = Path(args.out or "sweep")
    _prepare_out(out, args.force)
    (out / "report.json").write_text(report.to_json())
    (out / "distortion.csv").write_text(_csv_text(["severity", "kind", "auc"], grid.rows(), digest))
    print("kind".ljust(16) + "".join(f"{s:>8d}" for s in SEVERITIES))
    for name, row in [*zip(kinds, grid.auc), ("average", grid.average)]:
        print(name.ljust(16) + "".join(f"{v:8.4f}" for v in row))
    return EXIT_OK


# -- tables ---------------------------------------------------------------------


def _read_report(path: Path) -> tuple[str, dict]:
    report_path = path / "report.json" if path.is_dir() else path
    if not report_path.exists():
        raise MissingArtifactError(f"no report.json under {path}")
    try:
        report = json.loads(report_path.read_text())
        results = report["results"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"report: cannot read {report_path}: {exc}") from None
    name = report.get("meta", {}).get("run") or (path.name if path.is_dir() else path.parent.name)
    return name, {r["condition"]: r["auc_video"] for r in results}


def build_table(paths) -> tuple[list[str], list[dict]]:
    """One row per report, columns = union of conditions (first-seen order); missing cells stay blank."""
    rows, columns = [], []
    for p in paths:
        name, cells = _read_report(Path(p))
        for c in cells:
            if c not in columns:
                columns.append(c)
        rows.append({"run": name, **cells})
    return ["run", *columns], rows


def render_text(columns: list[str], rows: list[dict]) -> str:
    def cell(v):
        return "" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))

    table = [columns] + [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(columns))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip() for line in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_tables(args) -> int:
    if not args.runs:
        raise ConfigError("tables: at least one run directory is required")
    columns, rows = build_table(args.runs)
    digest = config_hash({"runs": [str(Path(p)) for p in args.runs]})
    text = render_text(columns, rows)
    if args.out:
        out = Path(args.out)
        _prepare_out(out, args.force)
        # repr() keeps the source floats verbatim
        csv_rows = [{c: (repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "")) for c in columns} for r in rows]
        (out / "table.csv").write_text(_csv_text(columns, csv_rows, digest))
        (out / "table.txt").write_text(f"config_hash={digest}\n" + text)
    print(text, end="")
    return EXIT_OK


# -- gradcheck ------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite(tolerance=args.tolerance, seed=args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.kind:4s}  {r.name:24s}  max_rel_error={r.max_rel_error:.3e}  tol={r.tolerance:.0e}")
    worst = max(results, key=lambda r: r.max_rel_error / r.tolerance)
    failed = [r for r in results if not r.passed]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        digest = config_hash({"tolerance": args.tolerance, "seed": args.seed or 0})
        _write_json(out / "gradcheck.json", {"config_hash": digest, "results": [
            {"name": r.name, "kind": r.kind, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance, "passed": r.passed}
            for r in results]})
    if failed:
        print(f"{len(failed)}/{len(results)} checks failed; worst: {worst.name} max_rel_error={worst.max_rel_error:.3e}")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(p, suppress: bool):
        # accepted before or after the subcommand; SUPPRESS keeps the subparser from resetting them
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=dflt(None), help="override the configured seed")
        p.add_argument("--out", default=dflt(None), help="output directory")
        p.add_argument("--force", action="store_true", default=dflt(False), help="overwrite a non-empty output directory")
        p.add_argument("--jobs", type=int, default=dflt(1), help="worker processes for independent runs/conditions")

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)
    parser = argparse.ArgumentParser(prog="afsl", description="Adversarially robust real/fake detection on synthetic clips.")
    global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def cfg_args(p):
        p.add_argument("--config", help="experiment config (YAML or JSON)")
        p.add_argument("--preset", help="shipped preset: leave_one_out, defense_matrix, ablation, distortion")

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset directory")
    cfg_args(p)

    p = sub.add_parser("train", parents=[common], help="train one run or every run of an experiment")
    cfg_args(p)
    p.add_argument("--data", help="dataset directory (default: generate from the config)")
    p.add_argument("--regime", help="override train.regime")
    p.add_argument("--steps", type=int, help="override train.steps")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint under attacks/distortions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--conditions", default="clean,pgd10", help="comma list, e.g. clean,pgd10,fgsm,cw2,transfer,gaussian_noise@3")
    p.add_argument("--surrogate", help="surrogate checkpoint for the transfer condition")
    p.add_argument("--split", choices=("test", "all"), default="test")

    p = sub.add_parser("sweep", parents=[common], help="7x5 distortion sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--distortions", nargs="*", default=None, help="distortion kinds (default: all seven)")
    p.add_argument("--split", choices=("test", "all"), default="test")

    p = sub.add_parser("tables", parents=[common], help="consolidate run reports into one table")
    p.add_argument("runs", nargs="*", help="run directories or report.json files")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op and loss")
    p.add_argument("--tolerance", type=float, default=None, help="override all tolerances")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args, parser)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "tables":
            return cmd_tables(args)
        return cmd_gradcheck(args)
    except DirectoryNotEmptyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NonFiniteError, FloatingPointError, ZeroNormError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetConfigError, TrainConfigError, AttackError, EvalError, DistortionError, ArchitectureError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
