"""Multi-trial benchmark protocol: sweeps, critical-region detection, tuning.

A sweep walks the hidden layer size over a range, training ``trials``
networks per size with freshly drawn input weights, and aggregates the
validation and test errors into per-size records. The ratio between the
smallest singular value of the training hidden matrix and the rank
threshold diagnoses when pseudoinversion leaves the numerically safe
regime; the first size where the median ratio drops below one opens the
critical region, inside which the ridge parameter is tuned on validation
error.

Trial seeds derive from (base seed, m, trial index) through a splittable
seed tree, so results are reproducible regardless of worker count and
adding trials never perturbs earlier ones. Seeds do not depend on the
method, so methods compared at the same (m, trial) share input weights.
"""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .data import decode_outputs, encode_targets, normalize
from .model import ACTIVATIONS, InitRegime, Slfn, forward, hidden_matrix, init_weights
from .numerics import (
    SvdConvergenceError,
    TruncationPolicy,
    as_matrix,
    default_threshold,
    filter_factors,
    min_sigma_ratio,
    solve_from_factors,
    svd,
)
from .stats import SampleSummary, summarize, t_test

#: Canonical method names from the benchmark.
STANDARD_LABELS = ("HypT-reg", "Sigm-reg", "HypT-unreg", "Sigm-unreg", "ELM")

#: Seed derivation scheme identifier, recorded in output metadata.
RNG_NAME = "numpy-pcg64"


class TrialError(RuntimeError):
    """A single training trial failed; carries (m, seed) context."""


@dataclasses.dataclass(frozen=True)
class MethodConfig:
    """Activation, init regime, and regularization for one method."""

    label: str
    activation: str
    init: InitRegime
    lam: float | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.lam is not None and not (
            math.isfinite(self.lam) and self.lam >= 0.0
        ):
            raise ValueError(
                f"regularization parameter must be finite and >= 0, got {self.lam}"
            )
        if self.label == "ELM":
            if (
                self.activation != "sigmoid"
                or self.init != InitRegime.fixed(1.0)
                or self.lam is not None
            ):
                raise ValueError(
                    "ELM means sigmoid activation, fixed (-1, 1) init, and no "
                    "regularization"
                )
        elif self.label in STANDARD_LABELS:
            want_act = "tanh" if self.label.startswith("HypT") else "sigmoid"
            if self.activation != want_act:
                raise ValueError(
                    f"{self.label} uses the {want_act} activation, "
                    f"got {self.activation}"
                )
            if self.init.kind != "scaled":
                raise ValueError(f"{self.label} uses the scaled init regime")
            if self.label.endswith("-reg") and self.lam is None:
                raise ValueError(f"{self.label} needs a regularization parameter")
            if self.label.endswith("-unreg") and self.lam is not None:
                raise ValueError(f"{self.label} does not take a regularization parameter")

    @classmethod
    def standard(cls, label: str, lam: float | None = None) -> "MethodConfig":
        """Build one of the five named benchmark methods."""
        if label == "ELM":
            if lam is not None:
                raise ValueError("ELM does not take a regularization parameter")
            return cls("ELM", "sigmoid", InitRegime.fixed(1.0), None)
        if label not in STANDARD_LABELS:
            raise ValueError(
                f"unknown method {label!r}; expected one of {STANDARD_LABELS}"
            )
        act = "tanh" if label.startswith("HypT") else "sigmoid"
        if label.endswith("-reg"):
            if lam is None:
                raise ValueError(f"{label} needs a regularization parameter")
            return cls(label, act, InitRegime.scaled(), lam)
        if lam is not None:
            raise ValueError(f"{label} does not take a regularization parameter")
        return cls(label, act, InitRegime.scaled(), None)


@dataclasses.dataclass(frozen=True)
class TrialResult:
    """Errors, stability ratio, and training wall time of one trial."""

    validation_err: float
    test_err: float
    min_ratio: float
    wall_time_s: float


@dataclasses.dataclass(frozen=True)
class SweepRecord:
    """Aggregated trial results at one hidden layer size.

    ``mean_err``/``std_err`` are test-set statistics; the validation
    counterparts ride along for tuning plots. ``min_ratio`` and
    ``wall_time_s`` are medians across trials. ``n_trials`` counts the
    trials that succeeded and were aggregated; ``n_failed`` the ones that
    were not.
    """

    m: int
    mean_err: float
    std_err: float
    val_mean_err: float
    val_std_err: float
    min_ratio: float
    wall_time_s: float
    n_trials: int
    n_failed: int

    @property
    def ok(self) -> bool:
        """False when too few trials survived to trust the aggregates."""
        attempted = self.n_trials + self.n_failed
        return (
            self.n_trials >= 2
            and attempted > 0
            and self.n_failed <= 0.1 * attempted
        )


@dataclasses.dataclass(frozen=True)
class CriticalRegion:
    """First hidden size whose stability ratio drops below one, plus window."""

    m_critical: int
    window: tuple
    returns_above: bool = False

    def __post_init__(self):
        lo, hi = self.window
        if not (lo <= self.m_critical <= hi):
            raise ValueError(
                f"window {self.window} does not contain m_critical="
                f"{self.m_critical}"
            )


@dataclasses.dataclass(frozen=True)
class TuningResult:
    """Chosen ridge parameter and the validation-error curve behind it."""

    lam: float
    errors: tuple  # (lambda, mean validation error) pairs, grid order
    m_values: tuple
    used_fallback: bool


def trial_seed(base_seed: int, m: int, trial: int) -> int:
    """Derive the seed of one (hidden size, trial) cell from the base seed."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(m, trial))
    return int(ss.generate_state(1, np.uint64)[0])


def prepare_dataset(d, split_):
    """Normalize features on the training rows and one-hot encode targets."""
    return encode_targets(normalize(d, train_indices=split_.train))


def rmse(predictions, targets) -> float:
    """Root mean squared error over all entries."""
    predictions = as_matrix(predictions, "predictions")
    targets = as_matrix(targets, "targets")
    if predictions.shape != targets.shape:
        raise ValueError(
            f"prediction shape {predictions.shape} does not match target "
            f"shape {targets.shape}"
        )
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def misclassification_rate(outputs, targets_onehot) -> float:
    """Fraction of rows whose argmax disagrees with the one-hot target."""
    targets_onehot = as_matrix(targets_onehot, "targets")
    predicted = decode_outputs(outputs, targets_onehot.shape[1])
    actual = np.argmax(targets_onehot, axis=1)
    return float(np.mean(predicted != actual))


def _part_error(d, net: Slfn, indices) -> float:
    y = forward(d.x[indices], net)
    t = d.t[indices]
    if d.task.kind == "regression":
        return rmse(y, t)
    return misclassification_rate(y, t)


def run_trial(d, split_, cfg: MethodConfig, m: int, seed) -> TrialResult:
    """Train one network and measure it.

    ``d`` must already be prepared (normalized features, one-hot targets
    for classification; see :func:`prepare_dataset`). The wall time covers
    weight initialization, the hidden matrix product, the SVD, and the
    output-weight solve; error evaluation is excluded. The stability ratio
    is min(sigma)/threshold for the training hidden matrix.
    """
    if m < 1:
        raise ValueError(f"hidden layer size must be >= 1, got {m}")
    if d.task.kind == "classification" and not d.encoded:
        raise ValueError(
            "classification targets must be one-hot encoded before training; "
            "call prepare_dataset"
        )
    x_train = d.x[split_.train]
    t_train = d.t[split_.train]

    start = time.perf_counter()
    c = init_weights(d.n_features, m, cfg.init, seed)
    net = Slfn(c=c, activation=cfg.activation)
    h = hidden_matrix(x_train, net)
    try:
        factors = svd(h)
    except SvdConvergenceError as exc:
        raise TrialError(f"SVD failed at m={m}, seed={seed}: {exc}") from exc
    if cfg.lam is None:
        coef = TruncationPolicy.default().inverse_sigma(factors)
    else:
        coef = filter_factors(factors, cfg.lam).values
    w = solve_from_factors(factors, t_train, coef)
    wall = time.perf_counter() - start

    tau = default_threshold(factors, h.shape[0], h.shape[1])
    ratio = min_sigma_ratio(factors, tau) if tau > 0.0 else math.inf
    net = dataclasses.replace(net, w=w)
    return TrialResult(
        validation_err=_part_error(d, net, split_.validation),
        test_err=_part_error(d, net, split_.test),
        min_ratio=ratio,
        wall_time_s=wall,
    )


def _sweep_one(args) -> SweepRecord:
    d, split_, cfg, m, trials, base_seed = args
    vals, tests, ratios, walls = [], [], [], []
    n_failed = 0
    for trial in range(trials):
        seed = trial_seed(base_seed, m, trial)
        try:
            r = run_trial(d, split_, cfg, m, seed)
        except TrialError:
            n_failed += 1
            continue
        vals.append(r.validation_err)
        tests.append(r.test_err)
        ratios.append(r.min_ratio)
        walls.append(r.wall_time_s)
    if len(tests) >= 2:
        t_sum = summarize(tests)
        v_sum = summarize(vals)
        return SweepRecord(
            m=m,
            mean_err=t_sum.mean,
            std_err=t_sum.std,
            val_mean_err=v_sum.mean,
            val_std_err=v_sum.std,
            min_ratio=float(np.median(ratios)),
            wall_time_s=float(np.median(walls)),
            n_trials=len(tests),
            n_failed=n_failed,
        )
    nan = float("nan")
    return SweepRecord(
        m=m,
        mean_err=nan,
        std_err=nan,
        val_mean_err=nan,
        val_std_err=nan,
        min_ratio=nan,
        wall_time_s=nan,
        n_trials=len(tests),
        n_failed=n_failed,
    )


def sweep(
    d,
    split_,
    cfg: MethodConfig,
    m_range,
    trials: int,
    base_seed: int = 0,
    workers: int | None = None,
) -> list:
    """One SweepRecord per hidden size in ``m_range``.

    ``d`` is the raw dataset; features are normalized on the training rows
    and targets encoded here, once. Hidden sizes may run in parallel
    (``workers``); the output is identical for any worker count, apart
    from the measured wall times.
    """
    if trials < 2:
        raise ValueError(f"need at least 2 trials, got {trials}")
    m_list = [int(m) for m in m_range]
    if not m_list:
        raise ValueError("m_range is empty")
    if any(m < 1 for m in m_list):
        raise ValueError("hidden sizes must be >= 1")
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_range must be strictly ascending")
    prepared = prepare_dataset(d, split_)
    args = [(prepared, split_, cfg, m, trials, base_seed) for m in m_list]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, args))
    return [_sweep_one(a) for a in args]


def detect_critical(records, window_fraction: float = 0.25):
    """Find the first hidden size whose median stability ratio dips below 1.

    Returns a CriticalRegion, or None when the ratio never crosses (then
    there is no instability to regularize against). The window spans
    ``window_fraction`` of the critical size on both flanks, at least one
    size wide. ``returns_above`` flags a ratio curve that recovers above 1
    after the crossing, which the unity-step theory does not expect.
    """
    if not (window_fraction > 0.0):
        raise ValueError(f"window fraction must be positive, got {window_fraction}")
    valid = [r for r in records if r.ok]
    for i, r in enumerate(valid):
        if r.min_ratio < 1.0:
            width = max(1, round(window_fraction * r.m))
            region = CriticalRegion(
                m_critical=r.m,
                window=(max(1, r.m - width), r.m + width),
                returns_above=any(s.min_ratio >= 1.0 for s in valid[i + 1 :]),
            )
            return region
    return None


def tune_lambda(
    d,
    split_,
    cfg: MethodConfig,
    region,
    grid,
    trials: int,
    base_seed: int = 0,
    m_range=None,
    m_step: int = 1,
) -> TuningResult:
    """Pick the ridge parameter minimizing mean validation error.

    The error is averaged over the critical window's hidden sizes (every
    ``m_step``-th one) and ``trials`` trials per size, with seeds shared
    across grid points so each candidate sees the same networks. Ties go
    to the larger parameter. With no critical region (``region=None``)
    the top decile of ``m_range`` stands in for the window and the result
    is flagged.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("the regularization grid is empty")
    if any(not (g > 0.0 and math.isfinite(g)) for g in grid):
        raise ValueError("grid values must be positive and finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid values must be strictly ascending")
    if trials < 1:
        raise ValueError(f"need at least 1 trial, got {trials}")
    if region is None:
        if not m_range:
            raise ValueError(
                "no critical region was found and no m_range was given for "
                "the fallback"
            )
        m_list = [int(m) for m in m_range]
        k = max(1, len(m_list) // 10)
        m_values = tuple(m_list[-k:])
        used_fallback = True
    else:
        lo, hi = region.window
        m_values = tuple(range(lo, hi + 1, max(1, int(m_step))))
        used_fallback = False

    prepared = prepare_dataset(d, split_)
    curve = []
    for lam in grid:
        cfg_lam = dataclasses.replace(cfg, lam=lam)
        errs = []
        for m in m_values:
            for trial in range(trials):
                seed = trial_seed(base_seed, m, trial)
                r = run_trial(prepared, split_, cfg_lam, m, seed)
                errs.append(r.validation_err)
        curve.append((lam, float(np.mean(errs))))
    best_lam, best_err = curve[0]
    for lam, err in curve[1:]:
        if err <= best_err:
            best_lam, best_err = lam, err
    return TuningResult(
        lam=best_lam,
        errors=tuple(curve),
        m_values=m_values,
        used_fallback=used_fallback,
    )


def near_optimal_size(records, confidence: float = 0.95, pooled: bool = False):
    """Smallest hidden size statistically tied with the sweep's best error.

    Walks the records in ascending size and returns the first whose mean
    test error is not significantly worse (two-sample t-test at the given
    confidence) than the global minimum. Returns (m, mean_err).
    """
    valid = sorted((r for r in records if r.ok), key=lambda r: r.m)
    if not valid:
        raise ValueError("no valid sweep records to choose from")
    best = min(valid, key=lambda r: r.mean_err)
    best_summary = SampleSummary(best.n_trials, best.mean_err, best.std_err)
    for r in valid:
        candidate = SampleSummary(r.n_trials, r.mean_err, r.std_err)
        result = t_test(candidate, best_summary, confidence=confidence, pooled=pooled)
        if not (result.significant and r.mean_err > best.mean_err):
            return r.m, r.mean_err
    return best.m, best.mean_err


#: Column order of sweep CSV files. The first eight are fixed; the last
#: three are supplementary.
CSV_COLUMNS = (
    "method",
    "dataset",
    "m",
    "mean_err",
    "std_err",
    "min_ratio",
    "n_trials",
    "wall_time_s",
    "val_mean_err",
    "val_std_err",
    "n_failed",
)


def write_sweep_csv(path, dataset_name: str, entries, metadata=None) -> None:
    """Write sweep records as CSV with '#'-prefixed metadata lines.

    ``entries`` is an iterable of (method label, records) pairs so one
    file can hold a single method or a whole comparison. Floats are
    written in shortest round-trip form.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key} = {value}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for label, records in entries:
            for r in records:
                row = (
                    label,
                    dataset_name,
                    str(r.m),
                    repr(float(r.mean_err)),
                    repr(float(r.std_err)),
                    repr(float(r.min_ratio)),
                    str(r.n_trials),
                    repr(float(r.wall_time_s)),
                    repr(float(r.val_mean_err)),
                    repr(float(r.val_std_err)),
                    str(r.n_failed),
                )
                fh.write(",".join(row) + "\n")


def read_sweep_csv(path):
    """Read a sweep CSV back into (metadata dict, list of row dicts)."""
    metadata = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    metadata[key.strip()] = value.strip()
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                continue
            row = dict(zip(header, cells))
            for key in (
                "mean_err",
                "std_err",
                "min_ratio",
                "wall_time_s",
                "val_mean_err",
                "val_std_err",
            ):
                if key in row:
                    row[key] = float(row[key])
            for key in ("m", "n_trials", "n_failed"):
                if key in row:
                    row[key] = int(row[key])
            rows.append(row)
    if header is None:
        raise ValueError(f"{path}: no header row found")
    return metadata, rows
