"""Config-driven command line for sweeps, tuning, training, prediction.

Settings resolve in three layers: built-in defaults, then the [experiment]
section of the INI file named by --config, then command-line flags. Flags
always win. Exit codes: 0 success, 1 runtime failure, 2 usage or config
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import pathlib
import sys
import time

import numpy as np

from . import __version__
from .data import (
    apply_feature_ranges,
    decode_outputs,
    load_csv,
    parse_schema,
    split,
)
from .experiment import (
    RNG_NAME,
    STANDARD_LABELS,
    MethodConfig,
    detect_critical,
    near_optimal_size,
    prepare_dataset,
    run_trial,
    sweep,
    trial_seed,
    tune_lambda,
    write_sweep_csv,
)
from .model import forward, load_network, random_network, save_network
from .model import train as train_network


class UsageError(Exception):
    """Bad flags, bad config, or missing input files; exits with 2."""


class RunError(Exception):
    """The run itself failed; exits with 1."""


#: Default ridge grid: one value per decade from 1e-14 up to 1e-1.
DEFAULT_LAMBDA_GRID = tuple(10.0 ** -e for e in range(14, 0, -1))

_CONFIG_KEYS = (
    "dataset",
    "schema",
    "methods",
    "m_range",
    "trials",
    "lambda",
    "lambda_grid",
    "fractions",
    "seed",
    "out",
    "confidence",
    "workers",
    "m_step",
)


@dataclasses.dataclass
class Settings:
    dataset: str | None = None
    schema: str | None = None
    methods: tuple = ()
    m_range: tuple | None = None
    trials: int = 100
    lam_default: float | None = None
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    fractions: tuple = (0.5, 0.25, 0.25)
    seed: int = 0
    out: str = "results"
    confidence: float = 0.95
    workers: int | None = None
    m_step: int = 1


def _parse_int(text, key):
    try:
        return int(str(text).strip())
    except ValueError:
        raise UsageError(f"{key}: expected an integer, got {text!r}") from None


def _parse_float(text, key):
    try:
        return float(str(text).strip())
    except ValueError:
        raise UsageError(f"{key}: expected a number, got {text!r}") from None


def _parse_m_range(text, key="m_range"):
    """Parse 'lo:hi', 'lo:hi:step', or a single size; bounds inclusive."""
    text = str(text).strip()
    parts = text.split(":")
    if len(parts) == 1:
        return (_parse_int(parts[0], key),)
    if len(parts) not in (2, 3):
        raise UsageError(f"{key}: expected lo:hi or lo:hi:step, got {text!r}")
    lo = _parse_int(parts[0], key)
    hi = _parse_int(parts[1], key)
    step = _parse_int(parts[2], key) if len(parts) == 3 else 1
    if step < 1:
        raise UsageError(f"{key}: step must be >= 1, got {step}")
    if lo < 1:
        raise UsageError(f"{key}: sizes start at 1, got {lo}")
    if hi < lo:
        raise UsageError(f"{key}: upper bound {hi} is below lower bound {lo}")
    return tuple(range(lo, hi + 1, step))


def _parse_float_list(text, key):
    cells = str(text).replace(",", " ").split()
    if not cells:
        raise UsageError(f"{key}: empty list")
    return tuple(_parse_float(c, key) for c in cells)


def _split_method_spec(spec):
    """'Sigm-reg:1e-12' -> ('Sigm-reg', 1e-12); bare labels carry None."""
    label, sep, lam_text = str(spec).strip().partition(":")
    if label not in STANDARD_LABELS:
        raise UsageError(
            f"unknown method {label!r}; choose from {', '.join(STANDARD_LABELS)}"
        )
    if not sep:
        return label, None
    return label, _parse_float(lam_text, f"method {label}")


def _build_sweep_method(label, lam, lam_default) -> MethodConfig:
    if label.endswith("-reg") and lam is None:
        lam = lam_default
        if lam is None:
            raise UsageError(
                f"{label} needs a regularization parameter; write "
                f"{label}:1e-11 or set the 'lambda' config key"
            )
    try:
        return MethodConfig.standard(label, lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_config_file(path) -> dict:
    import configparser

    p = pathlib.Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise UsageError(f"{p}: {exc}") from None
    if not parser.has_section("experiment"):
        raise UsageError(f"{p}: config needs an [experiment] section")
    section = parser["experiment"]
    for key in section:
        if key not in _CONFIG_KEYS:
            raise UsageError(
                f"{p}: unknown config key {key!r}; known keys: "
                f"{', '.join(_CONFIG_KEYS)}"
            )
    return dict(section)


def load_settings(args) -> Settings:
    """Defaults, then config file entries, then flags."""
    s = Settings()
    raw = _read_config_file(args.config) if getattr(args, "config", None) else {}

    if "dataset" in raw:
        s.dataset = raw["dataset"]
    if "schema" in raw:
        s.schema = raw["schema"]
    if "methods" in raw:
        s.methods = tuple(raw["methods"].split())
    if "m_range" in raw:
        s.m_range = _parse_m_range(raw["m_range"])
    if "trials" in raw:
        s.trials = _parse_int(raw["trials"], "trials")
    if "lambda" in raw:
        s.lam_default = _parse_float(raw["lambda"], "lambda")
    if "lambda_grid" in raw:
        s.lambda_grid = _parse_float_list(raw["lambda_grid"], "lambda_grid")
    if "fractions" in raw:
        s.fractions = _parse_float_list(raw["fractions"], "fractions")
    if "seed" in raw:
        s.seed = _parse_int(raw["seed"], "seed")
    if "out" in raw:
        s.out = raw["out"]
    if "confidence" in raw:
        s.confidence = _parse_float(raw["confidence"], "confidence")
    if "workers" in raw:
        s.workers = _parse_int(raw["workers"], "workers")
    if "m_step" in raw:
        s.m_step = _parse_int(raw["m_step"], "m_step")

    if getattr(args, "dataset", None):
        s.dataset = args.dataset
    if getattr(args, "schema", None):
        s.schema = args.schema
    if getattr(args, "method", None):
        s.methods = tuple(args.method)
    if getattr(args, "m_range", None):
        s.m_range = _parse_m_range(args.m_range)
    if getattr(args, "trials", None) is not None:
        s.trials = args.trials
    if getattr(args, "lambda_grid", None):
        s.lambda_grid = _parse_float_list(args.lambda_grid, "--lambda-grid")
    if getattr(args, "fractions", None):
        s.fractions = _parse_float_list(args.fractions, "--fractions")
    if getattr(args, "seed", None) is not None:
        s.seed = args.seed
    if getattr(args, "out", None):
        s.out = args.out
    if getattr(args, "confidence", None) is not None:
        s.confidence = args.confidence
    if getattr(args, "workers", None) is not None:
        s.workers = args.workers
    if getattr(args, "m_step", None) is not None:
        s.m_step = args.m_step

    if len(s.fractions) != 3:
        raise UsageError(
            f"fractions: expected three values, got {len(s.fractions)}"
        )
    if not (0.0 < s.confidence < 1.0):
        raise UsageError(
            f"confidence must lie strictly between 0 and 1, got {s.confidence}"
        )
    if s.workers is not None and s.workers < 1:
        raise UsageError(f"workers must be >= 1, got {s.workers}")
    if s.m_step < 1:
        raise UsageError(f"m_step must be >= 1, got {s.m_step}")
    return s


def _load_dataset(s: Settings):
    if not s.dataset:
        raise UsageError("no dataset given; set the 'dataset' key or --dataset")
    data_path = pathlib.Path(s.dataset)
    if not data_path.exists():
        raise UsageError(f"dataset file not found: {data_path}")
    schema_path = (
        pathlib.Path(s.schema) if s.schema else data_path.with_suffix(".schema")
    )
    if not schema_path.exists():
        raise UsageError(f"schema file not found: {schema_path}")
    try:
        schema = parse_schema(schema_path)
        return load_csv(data_path, schema)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _split_dataset(d, s: Settings):
    try:
        return split(d, s.fractions, seed=s.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_hash(s: Settings) -> str:
    blob = repr(sorted(dataclasses.asdict(s).items())).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _metadata(s: Settings, dataset_name: str, **extra) -> dict:
    meta = {
        "version": __version__,
        "rng": RNG_NAME,
        "config-hash": _config_hash(s),
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "dataset": dataset_name,
        "base-seed": s.seed,
        "trials": s.trials,
        "fractions": " ".join(repr(f) for f in s.fractions),
    }
    if s.m_range:
        meta["m-range"] = f"{s.m_range[0]}:{s.m_range[-1]}" + (
            f":{s.m_range[1] - s.m_range[0]}"
            if len(s.m_range) > 1 and s.m_range[1] - s.m_range[0] != 1
            else ""
        )
    meta.update(extra)
    return meta


def _out_dir(s: Settings) -> pathlib.Path:
    out = pathlib.Path(s.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


class _Cleanup:
    """Tracks files written by one command; removes them if the run dies."""

    def __init__(self):
        self.paths = []

    def track(self, path):
        self.paths.append(pathlib.Path(path))
        return path

    def discard_all(self):
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass


def cmd_sweep(args) -> int:
    s = load_settings(args)
    if s.m_range is None:
        raise UsageError("no m_range given; set the 'm_range' key or --m-range")
    if s.trials < 2:
        raise UsageError(f"trials must be >= 2, got {s.trials}")
    if not s.methods:
        raise UsageError("no methods given; set the 'methods' key or --method")
    configs = [
        _build_sweep_method(*_split_method_spec(spec), s.lam_default)
        for spec in s.methods
    ]
    d = _load_dataset(s)
    split_ = _split_dataset(d, s)
    out = _out_dir(s)
    cleanup = _Cleanup()
    results = []
    try:
        for cfg in configs:
            records = sweep(
                d, split_, cfg, s.m_range, s.trials, s.seed, s.workers
            )
            path = out / f"{d.name}_{cfg.label}_sweep.csv"
            write_sweep_csv(
                cleanup.track(path),
                d.name,
                [(cfg.label, records)],
                _metadata(s, d.name, method=cfg.label),
            )
            results.append((cfg.label, records))
            print(f"wrote {path}")
        cmp_path = out / f"{d.name}_comparison.csv"
        write_sweep_csv(
            cleanup.track(cmp_path),
            d.name,
            results,
            _metadata(s, d.name, methods=" ".join(c.label for c in configs)),
        )
        print(f"wrote {cmp_path}")
    except Exception:
        cleanup.discard_all()
        raise

    invalid = []
    for label, records in results:
        valid = [r for r in records if r.ok]
        invalid.extend((label, r.m) for r in records if not r.ok)
        if not valid:
            continue
        best = min(valid, key=lambda r: r.mean_err)
        line = f"{label}: best m={best.m} err={best.mean_err:.6g}"
        try:
            m_near, err_near = near_optimal_size(valid, confidence=s.confidence)
            line += f"; near-optimal m={m_near} err={err_near:.6g}"
        except ValueError:
            pass
        print(line)
    if invalid:
        where = ", ".join(f"{label} m={m}" for label, m in invalid)
        print(f"invalid records (too many failed trials): {where}", file=sys.stderr)
        return 1
    return 0


def cmd_tune(args) -> int:
    s = load_settings(args)
    if s.m_range is None:
        raise UsageError("no m_range given; set the 'm_range' key or --m-range")
    if s.trials < 2:
        raise UsageError(f"trials must be >= 2, got {s.trials}")
    specs = s.methods or ()
    reg_specs = [
        spec for spec in specs if _split_method_spec(spec)[0].endswith("-reg")
    ]
    if not reg_specs:
        raise UsageError(
            "tuning needs a regularized method (HypT-reg or Sigm-reg) in "
            "'methods' or --method"
        )
    label, _ = _split_method_spec(reg_specs[0])
    grid = tuple(sorted(s.lambda_grid))
    cfg_reg = MethodConfig.standard(label, grid[0])
    unreg_label = label[: -len("-reg")] + "-unreg"
    cfg_unreg = MethodConfig.standard(unreg_label)

    d = _load_dataset(s)
    split_ = _split_dataset(d, s)
    out = _out_dir(s)
    cleanup = _Cleanup()
    try:
        records = sweep(
            d, split_, cfg_unreg, s.m_range, s.trials, s.seed, s.workers
        )
        sweep_path = out / f"{d.name}_{unreg_label}_sweep.csv"
        write_sweep_csv(
            cleanup.track(sweep_path),
            d.name,
            [(unreg_label, records)],
            _metadata(s, d.name, method=unreg_label),
        )
        print(f"wrote {sweep_path}")
        region = detect_critical(records)
        result = tune_lambda(
            d,
            split_,
            cfg_reg,
            region,
            grid,
            s.trials,
            s.seed,
            m_range=s.m_range,
            m_step=s.m_step,
        )
        report_path = out / f"{d.name}_{label}_tuning.csv"
        meta = _metadata(s, d.name, method=label)
        if region is None:
            meta["m-critical"] = "none"
            meta["returns-above"] = "n/a"
        else:
            meta["m-critical"] = region.m_critical
            meta["window"] = f"{region.window[0]}:{region.window[1]}"
            meta["returns-above"] = str(region.returns_above).lower()
        meta["used-fallback"] = str(result.used_fallback).lower()
        meta["tuning-m-values"] = " ".join(str(m) for m in result.m_values)
        meta["lambda-star"] = repr(result.lam)
        with open(cleanup.track(report_path), "w", encoding="utf-8") as fh:
            for key, value in meta.items():
                fh.write(f"# {key} = {value}\n")
            fh.write("lambda,val_mean_err\n")
            for lam, err in result.errors:
                fh.write(f"{lam!r},{err!r}\n")
        print(f"wrote {report_path}")
    except Exception:
        cleanup.discard_all()
        raise

    if region is None:
        print(
            "no critical region: the stability ratio never dropped below 1; "
            f"tuned over the top decile of the range instead ({result.m_values})"
        )
    else:
        print(
            f"critical hidden size m={region.m_critical}, "
            f"window {region.window[0]}..{region.window[1]}"
            + (" (ratio later returns above 1)" if region.returns_above else "")
        )
    print(f"lambda* = {result.lam:g}")
    invalid = [r.m for r in records if not r.ok]
    if invalid:
        print(
            f"invalid records (too many failed trials) at m: {invalid}",
            file=sys.stderr,
        )
        return 1
    return 0


def _resolve_train_method(label, lam) -> MethodConfig:
    if lam is not None and lam == 0.0:
        # the truncated pseudoinverse is the lambda -> 0 limit; routing zero
        # here keeps "no lambda" and "--lambda 0" byte-identical on disk
        lam = None
    if label == "ELM":
        if lam is not None:
            raise UsageError("ELM is unregularized by definition; drop --lambda")
        return MethodConfig.standard("ELM")
    if lam is None and label.endswith("-reg"):
        label = label[: -len("-reg")] + "-unreg"
    elif lam is not None and label.endswith("-unreg"):
        label = label[: -len("-unreg")] + "-reg"
    try:
        return MethodConfig.standard(label, lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    s = load_settings(args)
    if args.m is None:
        raise UsageError("--m is required for train")
    if args.m < 1:
        raise UsageError(f"--m must be >= 1, got {args.m}")
    spec = None
    if getattr(args, "method", None):
        spec = args.method[0]
    elif s.methods:
        spec = s.methods[0]
    if spec is None:
        raise UsageError("no method given; set the 'methods' key or --method")
    label, lam_inline = _split_method_spec(spec)
    lam = args.lam if args.lam is not None else lam_inline
    if lam is None:
        lam = s.lam_default if label.endswith("-reg") else None
    cfg = _resolve_train_method(label, lam)

    d = _load_dataset(s)
    split_ = _split_dataset(d, s)
    prepared = prepare_dataset(d, split_)
    seed = trial_seed(s.seed, args.m, 0)
    net = random_network(
        prepared.n_features, args.m, cfg.activation, cfg.init, seed
    )
    trained = train_network(
        net,
        prepared.x[split_.train],
        prepared.t[split_.train],
        lam=cfg.lam,
    )
    trial = run_trial(prepared, split_, cfg, args.m, seed)

    out = _out_dir(s)
    stem = f"{d.name}_{cfg.label}_m{args.m}"
    model_path = out / f"{stem}.json"
    extra = {
        "dataset": d.name,
        "method": cfg.label,
        "m": args.m,
        "lambda": cfg.lam,
        "base-seed": s.seed,
        "trial-seed": seed,
        "rng": RNG_NAME,
        "task": d.task.kind,
        "num-classes": d.task.num_classes,
        "class-names": list(d.class_names) if d.class_names else None,
        "feature-names": list(prepared.feature_names),
        "feature-ranges": [list(r) for r in prepared.feature_ranges],
    }
    save_network(trained, model_path, extra)
    metrics = {
        "dataset": d.name,
        "method": cfg.label,
        "m": args.m,
        "lambda": cfg.lam,
        "base-seed": s.seed,
        "validation-err": trial.validation_err,
        "test-err": trial.test_err,
        "min-ratio": trial.min_ratio,
        "n-train": int(len(split_.train)),
        "n-validation": int(len(split_.validation)),
        "n-test": int(len(split_.test)),
        "version": __version__,
    }
    metrics_path = out / f"{stem}_metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote {model_path}")
    print(f"wrote {metrics_path}")
    err_name = "rmse" if d.task.kind == "regression" else "misclassification"
    print(
        f"{cfg.label} m={args.m}: validation {err_name}="
        f"{trial.validation_err:.6g}, test {err_name}={trial.test_err:.6g}, "
        f"min-ratio={trial.min_ratio:.3g}, train-time={trial.wall_time_s:.4f}s"
    )
    return 0


def _read_prediction_input(path, expected_cols):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != expected_cols:
                raise UsageError(
                    f"{path}:{lineno}: model expects {expected_cols} input "
                    f"columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise UsageError(
                    f"{path}:{lineno}: input rows must be numeric"
                ) from None
    return rows


def cmd_predict(args) -> int:
    model_path = pathlib.Path(args.model)
    if not model_path.exists():
        raise UsageError(f"model file not found: {model_path}")
    input_path = pathlib.Path(args.input)
    if not input_path.exists():
        raise UsageError(f"input file not found: {input_path}")
    try:
        net, extra = load_network(model_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"{model_path}: {exc}") from None
    if net.w is None:
        raise UsageError(f"{model_path}: the stored network is untrained")

    ranges = extra.get("feature-ranges")
    expected = len(ranges) if ranges else net.input_dim
    task = extra.get("task", "regression")
    class_names = extra.get("class-names")

    rows = _read_prediction_input(input_path, expected)
    if task == "classification":
        header = "label"
    elif net.output_dim == 1:
        header = "prediction"
    else:
        header = ",".join(f"prediction_{q + 1}" for q in range(net.output_dim))

    lines = [header]
    if rows:
        x = np.asarray(rows, dtype=np.float64)
        if ranges:
            x = apply_feature_ranges(x, [tuple(r) for r in ranges])
        y = forward(x, net)
        if task == "classification":
            idx = decode_outputs(y, net.output_dim)
            for i in idx:
                lines.append(class_names[int(i)] if class_names else str(int(i)))
        else:
            for row in y:
                lines.append(",".join(repr(float(v)) for v in row))
    out_path = pathlib.Path(args.out) if args.out else None
    text = "\n".join(lines) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
        print(f"wrote {out_path} ({len(lines) - 1} predictions)")
    return 0


def _add_common_flags(sp):
    sp.add_argument("--config", help="INI file with an [experiment] section")
    sp.add_argument("--dataset", help="dataset CSV path")
    sp.add_argument(
        "--schema",
        help="schema INI path (default: dataset path with .schema suffix)",
    )
    sp.add_argument(
        "--method",
        action="append",
        help="method spec like Sigm-reg:1e-12 or ELM; repeatable",
    )
    sp.add_argument("--m-range", dest="m_range", help="hidden sizes, lo:hi[:step]")
    sp.add_argument("--trials", type=int, help="trials per hidden size")
    sp.add_argument(
        "--lambda-grid",
        dest="lambda_grid",
        help="candidate ridge parameters, space or comma separated",
    )
    sp.add_argument("--fractions", help="train/validation/test fractions")
    sp.add_argument("--seed", type=int, help="base seed for the trial tree")
    sp.add_argument("--out", help="output directory (default: results)")
    sp.add_argument("--workers", type=int, help="parallel workers over hidden sizes")
    sp.add_argument(
        "--confidence", type=float, help="confidence level for significance"
    )
    sp.add_argument(
        "--m-step",
        dest="m_step",
        type=int,
        help="stride over hidden sizes inside the tuning window",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pinvnet",
        description=(
            "Train single-hidden-layer networks by SVD pseudoinversion and "
            "reproduce the hidden-size sweep benchmarks."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser(
        "sweep", help="error and stability curves over hidden sizes"
    )
    _add_common_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_tune = sub.add_parser(
        "tune", help="find the critical region, then pick the ridge parameter"
    )
    _add_common_flags(p_tune)
    p_tune.set_defaults(func=cmd_tune)

    p_train = sub.add_parser("train", help="train one network and save it")
    _add_common_flags(p_train)
    p_train.add_argument("--m", type=int, help="hidden layer size")
    p_train.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        help="ridge parameter; 0 trains unregularized",
    )
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser("predict", help="apply a saved model to new rows")
    p_pred.add_argument("--model", required=True, help="model JSON path")
    p_pred.add_argument(
        "--input", required=True, help="CSV of feature rows (no header)"
    )
    p_pred.add_argument("--out", help="output CSV path (default: stdout)")
    p_pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
