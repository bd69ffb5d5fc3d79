import dataclasses
import math

import numpy as np
import pytest

import pinvnet.experiment as experiment
from pinvnet.data import Dataset, TaskKind, split
from pinvnet.experiment import (
    CriticalRegion,
    MethodConfig,
    SweepRecord,
    TrialError,
    detect_critical,
    misclassification_rate,
    near_optimal_size,
    prepare_dataset,
    read_sweep_csv,
    rmse,
    run_trial,
    sweep,
    trial_seed,
    tune_lambda,
    write_sweep_csv,
)
from pinvnet.model import InitRegime, Slfn, hidden_matrix, init_weights


def make_regression(n=80, p=3, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, p))
    t = np.sin(2.0 * x[:, :1]) + 0.5 * x[:, 1:2] * x[:, 2:3]
    if noise:
        t = t + noise * rng.standard_normal(t.shape)
    return Dataset(
        name="synthetic",
        x=x,
        t=t,
        task=TaskKind.regression(),
        feature_names=tuple(f"col{j + 1}" for j in range(p)),
    )


def make_classification(n_per_class=30, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[-2.0, -2.0], [2.0, -2.0], [0.0, 2.5]])
    xs, ls = [], []
    for c, center in enumerate(centers):
        xs.append(center + 0.3 * rng.standard_normal((n_per_class, 2)))
        ls.extend([float(c)] * n_per_class)
    x = np.vstack(xs)
    t = np.array(ls).reshape(-1, 1)
    return Dataset(
        name="blobs",
        x=x,
        t=t,
        task=TaskKind.classification(3),
        feature_names=("col1", "col2"),
        class_names=("a", "b", "c"),
    )


def unreg_cfg(activation="tanh"):
    return MethodConfig(
        label=f"custom-{activation}",
        activation=activation,
        init=InitRegime.scaled(),
        lam=None,
    )


class TestMethodConfig:
    def test_standard_labels(self):
        hyp = MethodConfig.standard("HypT-reg", lam=1e-10)
        assert hyp.activation == "tanh"
        assert hyp.init == InitRegime.scaled()
        assert hyp.lam == 1e-10
        sig = MethodConfig.standard("Sigm-unreg")
        assert sig.activation == "sigmoid"
        assert sig.lam is None
        elm = MethodConfig.standard("ELM")
        assert elm.activation == "sigmoid"
        assert elm.init == InitRegime.fixed(1.0)
        assert elm.lam is None

    def test_elm_definition_enforced(self):
        with pytest.raises(ValueError, match="ELM"):
            MethodConfig("ELM", "tanh", InitRegime.fixed(1.0), None)
        with pytest.raises(ValueError, match="ELM"):
            MethodConfig("ELM", "sigmoid", InitRegime.scaled(), None)
        with pytest.raises(ValueError, match="ELM"):
            MethodConfig("ELM", "sigmoid", InitRegime.fixed(1.0), 1e-8)

    def test_reg_needs_lambda(self):
        with pytest.raises(ValueError, match="regularization"):
            MethodConfig.standard("Sigm-reg")
        with pytest.raises(ValueError, match="regularization"):
            MethodConfig("HypT-reg", "tanh", InitRegime.scaled(), None)

    def test_unreg_rejects_lambda(self):
        with pytest.raises(ValueError):
            MethodConfig.standard("HypT-unreg", lam=1e-8)
        with pytest.raises(ValueError):
            MethodConfig("Sigm-unreg", "sigmoid", InitRegime.scaled(), 1e-8)

    def test_wrong_activation_for_label(self):
        with pytest.raises(ValueError, match="tanh"):
            MethodConfig("HypT-reg", "sigmoid", InitRegime.scaled(), 1e-8)

    def test_custom_label_free_form(self):
        cfg = MethodConfig("mine", "sigmoid", InitRegime.fixed(0.5), 0.0)
        assert cfg.lam == 0.0

    def test_unknown_standard_label(self):
        with pytest.raises(ValueError, match="unknown method"):
            MethodConfig.standard("Perceptron")

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            MethodConfig("mine", "tanh", InitRegime.scaled(), -1e-9)


class TestTrialSeed:
    def test_deterministic(self):
        assert trial_seed(7, 10, 3) == trial_seed(7, 10, 3)

    def test_distinct_cells(self):
        seeds = {
            trial_seed(b, m, t)
            for b in (0, 1)
            for m in (1, 2, 50)
            for t in (0, 1, 2)
        }
        assert len(seeds) == 18

    def test_extending_trials_keeps_prefix(self):
        first_three = [trial_seed(9, 25, t) for t in range(3)]
        first_five = [trial_seed(9, 25, t) for t in range(5)]
        assert first_five[:3] == first_three


class TestErrorMetrics:
    def test_rmse_zero_on_exact(self):
        y = np.array([[1.0], [2.0]])
        assert rmse(y, y) == 0.0

    def test_rmse_hand_value(self):
        y = np.array([[0.0], [0.0]])
        t = np.array([[3.0], [4.0]])
        assert rmse(y, t) == pytest.approx(math.sqrt(12.5))

    def test_rmse_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            rmse(np.zeros((2, 1)), np.zeros((3, 1)))

    def test_misclassification_fraction(self):
        t = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
        y = np.array([[0.9, 0.1], [0.2, 0.8], [0.1, 0.9], [0.6, 0.4]])
        assert misclassification_rate(y, t) == 0.5


class TestRunTrial:
    def test_lambda_zero_matches_unregularized(self):
        d = make_regression(noise=0.02)
        sp = split(d, seed=1)
        prep = prepare_dataset(d, sp)
        cfg_zero = dataclasses.replace(unreg_cfg(), lam=0.0)
        for trial in range(5):
            seed = trial_seed(3, 10, trial)
            a = run_trial(prep, sp, unreg_cfg(), 10, seed)
            b = run_trial(prep, sp, cfg_zero, 10, seed)
            assert abs(a.validation_err - b.validation_err) <= 1e-8
            assert abs(a.test_err - b.test_err) <= 1e-8
            assert a.min_ratio == b.min_ratio

    def test_m_one_finite_and_stable(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        prep = prepare_dataset(d, sp)
        r = run_trial(prep, sp, unreg_cfg(), 1, seed=42)
        assert math.isfinite(r.validation_err)
        assert math.isfinite(r.test_err)
        assert r.min_ratio > 1e6
        assert r.wall_time_s >= 0.0

    def test_exact_recovery_on_consistent_targets(self):
        raw = make_regression(n=100, p=3, seed=2)
        sp = split(raw, seed=3)
        prep = prepare_dataset(raw, sp)
        m, seed = 12, trial_seed(0, 12, 0)
        cfg = unreg_cfg()
        c = init_weights(prep.n_features, m, cfg.init, seed)
        h = hidden_matrix(prep.x, Slfn(c=c, activation=cfg.activation))
        w_true = np.random.default_rng(9).standard_normal((m, 1))
        consistent = dataclasses.replace(raw, t=h @ w_true)
        r = run_trial(
            prepare_dataset(consistent, sp), sp, cfg, m, seed
        )
        assert r.test_err <= 1e-6
        assert r.validation_err <= 1e-6

    def test_classification_requires_encoding(self):
        d = make_classification()
        sp = split(d, seed=0)
        with pytest.raises(ValueError, match="one-hot"):
            run_trial(d, sp, unreg_cfg("sigmoid"), 5, seed=1)

    def test_classification_error_bounded(self):
        d = make_classification()
        sp = split(d, seed=0)
        prep = prepare_dataset(d, sp)
        r = run_trial(prep, sp, unreg_cfg("sigmoid"), 10, seed=5)
        assert 0.0 <= r.test_err <= 1.0
        # well-separated blobs should be almost perfectly classified
        assert r.test_err <= 0.2

    def test_bad_m(self):
        d = make_regression()
        sp = split(d, seed=0)
        with pytest.raises(ValueError):
            run_trial(prepare_dataset(d, sp), sp, unreg_cfg(), 0, seed=1)


def strip_timing(record):
    return dataclasses.replace(record, wall_time_s=0.0)


class TestSweep:
    def test_deterministic_given_base_seed(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        a = sweep(d, sp, unreg_cfg(), range(1, 6), trials=3, base_seed=11)
        b = sweep(d, sp, unreg_cfg(), range(1, 6), trials=3, base_seed=11)
        assert [strip_timing(r) for r in a] == [strip_timing(r) for r in b]

    def test_base_seed_changes_results(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        a = sweep(d, sp, unreg_cfg(), [5], trials=3, base_seed=11)
        b = sweep(d, sp, unreg_cfg(), [5], trials=3, base_seed=12)
        assert a[0].mean_err != b[0].mean_err

    def test_forced_identical_seeds_degenerate_std(self, monkeypatch):
        monkeypatch.setattr(experiment, "trial_seed", lambda b, m, t: 1234)
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        records = sweep(d, sp, unreg_cfg(), [4], trials=2, base_seed=0)
        assert records[0].std_err == 0.0
        assert records[0].val_std_err == 0.0

    def test_record_fields(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        records = sweep(d, sp, unreg_cfg(), [2, 4, 6], trials=4, base_seed=0)
        assert [r.m for r in records] == [2, 4, 6]
        for r in records:
            assert r.ok
            assert r.n_trials == 4
            assert r.n_failed == 0
            assert r.mean_err >= 0.0
            assert r.std_err >= 0.0
            assert r.min_ratio > 0.0
            assert r.wall_time_s > 0.0

    def test_parallel_matches_serial(self):
        d = make_regression(n=60, noise=0.05)
        sp = split(d, seed=1)
        serial = sweep(d, sp, unreg_cfg(), [2, 5], trials=2, base_seed=7)
        parallel = sweep(
            d, sp, unreg_cfg(), [2, 5], trials=2, base_seed=7, workers=2
        )
        assert [strip_timing(r) for r in serial] == [
            strip_timing(r) for r in parallel
        ]

    def test_validation(self):
        d = make_regression()
        sp = split(d, seed=1)
        with pytest.raises(ValueError, match="trials"):
            sweep(d, sp, unreg_cfg(), [2], trials=1)
        with pytest.raises(ValueError, match="empty"):
            sweep(d, sp, unreg_cfg(), [], trials=2)
        with pytest.raises(ValueError, match="ascending"):
            sweep(d, sp, unreg_cfg(), [5, 3], trials=2)
        with pytest.raises(ValueError, match=">= 1"):
            sweep(d, sp, unreg_cfg(), [0, 3], trials=2)

    def test_failed_trials_counted(self, monkeypatch):
        calls = {"n": 0}
        real = experiment.run_trial

        def flaky(d, sp, cfg, m, seed):
            calls["n"] += 1
            if calls["n"] % 4 == 0:
                raise TrialError("forced failure")
            return real(d, sp, cfg, m, seed)

        monkeypatch.setattr(experiment, "run_trial", flaky)
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        records = sweep(d, sp, unreg_cfg(), [3], trials=8, base_seed=0)
        assert records[0].n_failed == 2
        assert records[0].n_trials == 6
        assert not records[0].ok  # 2/8 failures exceeds the 10% budget


def mk_record(m, mean, std=0.01, ratio=10.0, n=50, n_failed=0):
    return SweepRecord(
        m=m,
        mean_err=mean,
        std_err=std,
        val_mean_err=mean,
        val_std_err=std,
        min_ratio=ratio,
        wall_time_s=0.001,
        n_trials=n,
        n_failed=n_failed,
    )


class TestDetectCritical:
    def test_first_crossing(self):
        records = [
            mk_record(1, 0.5, ratio=10.0),
            mk_record(2, 0.5, ratio=5.0),
            mk_record(3, 0.5, ratio=0.5),
            mk_record(4, 0.5, ratio=0.1),
        ]
        region = detect_critical(records)
        assert region.m_critical == 3
        assert region.window == (2, 4)
        assert not region.returns_above

    def test_absence(self):
        records = [mk_record(m, 0.5, ratio=2.0) for m in range(1, 10)]
        assert detect_critical(records) is None

    def test_dip_and_return_flagged(self):
        records = [
            mk_record(1, 0.5, ratio=10.0),
            mk_record(2, 0.5, ratio=0.5),
            mk_record(3, 0.5, ratio=3.0),
            mk_record(4, 0.5, ratio=0.2),
        ]
        region = detect_critical(records)
        assert region.m_critical == 2
        assert region.returns_above

    def test_window_respects_floor(self):
        records = [mk_record(1, 0.5, ratio=2.0), mk_record(2, 0.5, ratio=0.9)]
        region = detect_critical(records)
        assert region.m_critical == 2
        assert region.window[0] >= 1
        assert region.window[0] <= 2 <= region.window[1]

    def test_window_scales_with_m(self):
        records = [mk_record(m, 0.5, ratio=2.0) for m in range(1, 100)]
        records.append(mk_record(100, 0.5, ratio=0.8))
        region = detect_critical(records)
        assert region.m_critical == 100
        assert region.window == (75, 125)

    def test_invalid_records_ignored(self):
        records = [
            mk_record(1, 0.5, ratio=0.1, n=1, n_failed=9),  # not trustworthy
            mk_record(2, 0.5, ratio=2.0),
            mk_record(3, 0.5, ratio=0.5),
        ]
        region = detect_critical(records)
        assert region.m_critical == 3

    def test_region_invariant(self):
        with pytest.raises(ValueError, match="window"):
            CriticalRegion(m_critical=10, window=(12, 15))


class TestTuneLambda:
    def test_single_element_grid(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        cfg = MethodConfig.standard("HypT-reg", lam=1e-8)
        region = CriticalRegion(m_critical=5, window=(4, 6))
        res = tune_lambda(d, sp, cfg, region, [1e-9], trials=2, base_seed=0)
        assert res.lam == 1e-9
        assert not res.used_fallback
        assert res.m_values == (4, 5, 6)

    def test_noiseless_full_rank_prefers_smallest(self):
        raw = make_regression(n=100, p=3, seed=2)
        sp = split(raw, seed=3)
        prep = prepare_dataset(raw, sp)
        m = 8
        cfg = MethodConfig.standard("HypT-reg", lam=1e-8)
        seed = trial_seed(0, m, 0)
        c = init_weights(prep.n_features, m, cfg.init, seed)
        h = hidden_matrix(prep.x, Slfn(c=c, activation="tanh"))
        w_true = np.random.default_rng(5).standard_normal((m, 1))
        consistent = dataclasses.replace(raw, t=h @ w_true)
        region = CriticalRegion(m_critical=m, window=(m, m))
        res = tune_lambda(
            consistent, sp, cfg, region, [1e-12, 1e-6, 1e-2], trials=1, base_seed=0
        )
        assert res.lam == 1e-12

    def test_exact_tie_prefers_larger(self):
        # both grid points vanish against sigma^2 in float arithmetic, so
        # the validation errors tie exactly and the larger lambda wins
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        cfg = MethodConfig.standard("Sigm-reg", lam=1e-8)
        region = CriticalRegion(m_critical=4, window=(3, 5))
        res = tune_lambda(
            d, sp, cfg, region, [1e-300, 1e-299], trials=2, base_seed=2
        )
        errs = dict(res.errors)
        assert errs[1e-300] == errs[1e-299]
        assert res.lam == 1e-299

    def test_fallback_without_region(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        cfg = MethodConfig.standard("Sigm-reg", lam=1e-8)
        res = tune_lambda(
            d,
            sp,
            cfg,
            None,
            [1e-10, 1e-6],
            trials=2,
            base_seed=0,
            m_range=list(range(1, 21)),
        )
        assert res.used_fallback
        assert res.m_values == (19, 20)

    def test_fallback_needs_m_range(self):
        d = make_regression()
        sp = split(d, seed=1)
        cfg = MethodConfig.standard("Sigm-reg", lam=1e-8)
        with pytest.raises(ValueError, match="m_range"):
            tune_lambda(d, sp, cfg, None, [1e-8], trials=2)

    def test_m_step_thins_window(self):
        d = make_regression(noise=0.05)
        sp = split(d, seed=1)
        cfg = MethodConfig.standard("Sigm-reg", lam=1e-8)
        region = CriticalRegion(m_critical=8, window=(6, 10))
        res = tune_lambda(
            d, sp, cfg, region, [1e-8], trials=2, base_seed=0, m_step=2
        )
        assert res.m_values == (6, 8, 10)

    def test_grid_validation(self):
        d = make_regression()
        sp = split(d, seed=1)
        cfg = MethodConfig.standard("Sigm-reg", lam=1e-8)
        region = CriticalRegion(m_critical=5, window=(4, 6))
        with pytest.raises(ValueError, match="empty"):
            tune_lambda(d, sp, cfg, region, [], trials=2)
        with pytest.raises(ValueError, match="positive"):
            tune_lambda(d, sp, cfg, region, [-1e-8, 1e-6], trials=2)
        with pytest.raises(ValueError, match="ascending"):
            tune_lambda(d, sp, cfg, region, [1e-6, 1e-8], trials=2)


class TestNearOptimalSize:
    def test_flat_curve_smallest(self):
        records = [mk_record(m, 1.0, std=0.1) for m in (5, 10, 15)]
        m, err = near_optimal_size(records)
        assert m == 5
        assert err == 1.0

    def test_strictly_decreasing_tight(self):
        records = [
            mk_record(5, 3.0, std=0.001),
            mk_record(10, 2.0, std=0.001),
            mk_record(15, 1.0, std=0.001),
        ]
        m, err = near_optimal_size(records)
        assert m == 15
        assert err == 1.0

    def test_statistical_tie_prefers_smaller(self):
        records = [
            mk_record(5, 1.002, std=0.5),
            mk_record(10, 1.0, std=0.5),
            mk_record(15, 3.0, std=0.5),
        ]
        m, _ = near_optimal_size(records)
        assert m == 5

    def test_no_valid_records(self):
        records = [mk_record(5, 1.0, n=1, n_failed=9)]
        with pytest.raises(ValueError, match="valid"):
            near_optimal_size(records)

    def test_unsorted_input_handled(self):
        records = [
            mk_record(15, 1.0, std=0.5),
            mk_record(5, 1.001, std=0.5),
        ]
        m, _ = near_optimal_size(records)
        assert m == 5


class TestSweepCsv:
    def test_round_trip(self, tmp_path):
        records = [
            mk_record(1, 0.123456789012345, std=0.01, ratio=float("inf")),
            mk_record(2, 0.5, std=0.02, ratio=0.75),
        ]
        path = tmp_path / "sweep.csv"
        write_sweep_csv(
            path,
            "toy",
            [("HypT-unreg", records)],
            metadata={"base-seed": 7, "rng": "numpy-pcg64"},
        )
        metadata, rows = read_sweep_csv(path)
        assert metadata["base-seed"] == "7"
        assert metadata["rng"] == "numpy-pcg64"
        assert len(rows) == 2
        assert rows[0]["method"] == "HypT-unreg"
        assert rows[0]["dataset"] == "toy"
        assert rows[0]["m"] == 1
        assert rows[0]["mean_err"] == 0.123456789012345
        assert rows[0]["min_ratio"] == float("inf")
        assert rows[1]["n_trials"] == 50

    def test_fixed_column_prefix(self, tmp_path):
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, "toy", [("ELM", [mk_record(3, 1.0)])])
        header = [
            line
            for line in path.read_text().splitlines()
            if not line.startswith("#")
        ][0]
        assert header.split(",")[:8] == [
            "method",
            "dataset",
            "m",
            "mean_err",
            "std_err",
            "min_ratio",
            "n_trials",
            "wall_time_s",
        ]

    def test_multiple_methods_in_one_file(self, tmp_path):
        path = tmp_path / "cmp.csv"
        write_sweep_csv(
            path,
            "toy",
            [("ELM", [mk_record(3, 1.0)]), ("Sigm-reg", [mk_record(3, 0.5)])],
        )
        _, rows = read_sweep_csv(path)
        assert [r["method"] for r in rows] == ["ELM", "Sigm-reg"]

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "meta_only.csv"
        path.write_text("# a = b\n")
        with pytest.raises(ValueError, match="header"):
            read_sweep_csv(path)
