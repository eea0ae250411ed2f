import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from icdfs.cohort import BinaryMatrix, SplitSpec, aggregate_windows, encode_cohort
from icdfs.errors import SingleClassTrain, UnknownCode
from icdfs.eval_report import (
    EvalConfig,
    accuracy_histogram,
    classification_metrics,
    depth_sum,
    histogram_csv,
    mean_bce,
    mode_baseline,
    outcome_eval,
    paired_t_test,
    prevalence_report,
    reconstruct_eval,
    report_json,
    table1_csv,
    table2_csv,
    upsample_minority,
)
from icdfs.selection import SelectionResult


def binary(rng, n, d, p=0.3):
    return (rng.random((n, d)) < p).astype(float)


class TestModeBaseline:
    def test_all_zero_column(self):
        assert mode_baseline(np.zeros((4, 1)), np.zeros((3, 1)))[0] == 1.0

    def test_half_half_test_column(self):
        acc = mode_baseline(np.array([[0.0], [0.0], [1.0]]), np.array([[0.0], [1.0]]))
        assert acc[0] == 0.5

    def test_shifted_majority(self):
        acc = mode_baseline(np.array([[0.0], [0.0], [1.0]]), np.array([[1.0], [1.0], [0.0]]))
        assert acc[0] < 0.5

    def test_exact_tie_predicts_zero(self):
        acc = mode_baseline(np.array([[0.0], [1.0]]), np.array([[0.0], [0.0]]))
        assert acc[0] == 1.0

    def test_sparse_and_binary_matrix_inputs(self):
        tr = binary(np.random.default_rng(0), 20, 5, 0.6)
        te = binary(np.random.default_rng(1), 10, 5, 0.6)
        bm = BinaryMatrix(sp.csr_matrix(tr.astype(np.uint8)), list("abcde"))
        np.testing.assert_array_equal(mode_baseline(bm, sp.csr_matrix(te)), mode_baseline(tr, te))

    def test_empty_train(self):
        with pytest.raises(ValueError):
            mode_baseline(np.zeros((0, 2)), np.zeros((2, 2)))


class TestPairedTTest:
    def test_identical(self):
        t = paired_t_test([0.5, 0.7, 0.9], [0.5, 0.7, 0.9])
        assert t.statistic == 0.0 and t.pvalue == 1.0 and t.zero_variance

    def test_table_example(self):
        d = np.arange(1, 6) * 1e-3
        t = paired_t_test(0.5 + d, np.full(5, 0.5))
        assert t.statistic == pytest.approx(3 * np.sqrt(5) / np.sqrt(2.5), rel=1e-6)
        assert t.pvalue == pytest.approx(0.0132, abs=1e-4)
        assert not t.zero_variance

    def test_constant_nonzero_difference(self):
        t = paired_t_test([0.6, 0.7], [0.5, 0.6])
        assert t.pvalue == 0.0 and t.zero_variance and t.statistic == np.inf

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 300))
        a = rng.uniform(0.5, 1, n)
        b = np.clip(a + rng.normal(scale=0.05, loc=rng.normal(scale=0.02), size=n), 0, 1)
        ref = stats.ttest_rel(a, b)
        got = paired_t_test(a, b)
        assert got.statistic == pytest.approx(ref.statistic, abs=1e-6)
        assert abs(got.pvalue - ref.pvalue) < 1e-4

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0], [1.0])
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])


class TestMetrics:
    def test_definitions(self):
        m = classification_metrics([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
        assert (m["tp"], m["fp"], m["tn"], m["fn"]) == (2, 1, 1, 1)
        assert m["precision"] == pytest.approx(2 / 3)
        assert m["recall"] == pytest.approx(2 / 3)
        assert m["accuracy"] == pytest.approx(0.6)

    def test_zero_recall_gives_zero_f1(self):
        m = classification_metrics([1, 0, 0], [0, 0, 0])
        assert m["recall"] == 0 and m["precision"] == 0 and m["f1"] == 0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
    def test_identities(self, pairs):
        y, p = (np.array(v) for v in zip(*pairs))
        m = classification_metrics(y, p)
        tp, fp, fn = m["tp"], m["fp"], m["fn"]
        assert m["precision"] == (tp / (tp + fp) if tp + fp else 0.0)
        assert m["recall"] == (tp / (tp + fn) if tp + fn else 0.0)
        pr, rc = m["precision"], m["recall"]
        f1 = 2 * pr * rc / (pr + rc) if pr + rc else 0.0
        assert abs(m["f1"] - f1) < 1e-9
        assert all(0 <= m[k] <= 1 for k in ("accuracy", "precision", "recall", "f1"))

    def test_mean_bce_clamps(self):
        assert np.isfinite(mean_bce([0.0, 1.0], [1.0, 0.0]))
        assert mean_bce([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2))


class TestUpsample:
    def test_ninety_ten(self):
        y = np.array([0] * 90 + [1] * 10)
        X = np.arange(100)[:, None]
        Xb, yb = upsample_minority(X, y, seed=0)
        assert len(yb) == 180 and (yb == 0).sum() == 90 and (yb == 1).sum() == 90
        np.testing.assert_array_equal(Xb[:100, 0], np.arange(100))
        assert set(Xb[100:, 0]) <= set(range(90, 100))

    def test_balanced_unchanged(self):
        y = np.array([0, 1, 0, 1])
        Xb, yb = upsample_minority(np.eye(4), y)
        np.testing.assert_array_equal(Xb, np.eye(4))
        np.testing.assert_array_equal(yb, y)

    def test_same_seed_same_indices(self):
        y = np.array([0] * 30 + [1] * 5)
        a = upsample_minority(np.zeros((35, 1)), y, seed=4, return_indices=True)[2]
        b = upsample_minority(np.zeros((35, 1)), y, seed=4, return_indices=True)[2]
        np.testing.assert_array_equal(a, b)

    def test_sparse_and_binary_matrix(self):
        X = binary(np.random.default_rng(0), 12, 3)
        y = np.array([1] * 3 + [0] * 9)
        Xs, ys = upsample_minority(sp.csr_matrix(X), y, seed=1)
        Xd, yd = upsample_minority(X, y, seed=1)
        np.testing.assert_array_equal(Xs.toarray(), Xd)
        bm = BinaryMatrix(sp.csr_matrix(X.astype(np.uint8)), ["a", "b", "c"])
        Xb, _ = upsample_minority(bm, y, seed=1)
        np.testing.assert_array_equal(Xb.toarray(), Xd)

    def test_single_class(self):
        with pytest.raises(SingleClassTrain):
            upsample_minority(np.zeros((3, 1)), [1, 1, 1])


class TestReconstruction:
    @pytest.fixture(scope="class")
    def report(self):
        rng = np.random.default_rng(0)
        latent = binary(rng, 600, 3, 0.4)
        X = np.abs(latent[:, np.arange(12) % 3] - binary(rng, 600, 12, 0.05))
        sel = SelectionResult("ls", [0, 1, 2], np.arange(12.0), seed=3)
        return reconstruct_eval(sel, X[:400], X[400:], EvalConfig(epochs=20, seed=1))

    def test_shapes_and_mean(self, report):
        assert report.per_feature_accuracy.shape == (12,)
        assert abs(report.mean_accuracy - report.per_feature_accuracy.mean()) <= 1e-12
        assert np.all((report.per_feature_accuracy >= 0) & (report.per_feature_accuracy <= 1))
        assert report.method == "ls" and report.seed == 3 and report.n_selected == 3

    def test_beats_mode_on_structured_data(self, report):
        assert report.mean_accuracy > report.baseline_mean_accuracy
        assert report.significant

    def test_baseline_bce_is_column_mean_predictor(self):
        rng = np.random.default_rng(1)
        tr, te = binary(rng, 50, 4), binary(rng, 20, 4)
        r = reconstruct_eval([0], tr, te, EvalConfig(epochs=1))
        assert r.baseline_bce == pytest.approx(mean_bce(np.tile(tr.mean(axis=0), (20, 1)), te))

    def test_bad_selection(self):
        with pytest.raises(ValueError):
            reconstruct_eval([7], np.zeros((4, 3)), np.zeros((2, 3)), EvalConfig(epochs=1))

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        tr, te = binary(rng, 80, 6), binary(rng, 30, 6)
        cfg = EvalConfig(epochs=3, seed=5)
        a = reconstruct_eval([1, 2], tr, te, cfg)
        b = reconstruct_eval([1, 2], tr, te, cfg)
        assert report_json(a, None) == report_json(b, None)


class TestOutcome:
    def test_separable_indicator(self):
        rng = np.random.default_rng(0)
        X = binary(rng, 800, 5, 0.2)
        y = X[:, 2].astype(int)
        r = outcome_eval([2, 4], X[:600], X[600:], (y[:600], y[600:]), EvalConfig(seed=0))
        assert r.accuracy >= 0.99
        assert r.n_train_upsampled == 2 * max((y[:600] == 0).sum(), (y[:600] == 1).sum())

    def test_test_split_untouched(self):
        rng = np.random.default_rng(1)
        X = binary(rng, 200, 4)
        y = (rng.random(200) < 0.2).astype(int)
        r = outcome_eval([0, 1], X[:150], X[150:], (y[:150], y[150:]), EvalConfig(outcome_epochs=2))
        assert r.tp + r.fp + r.tn + r.fn == 50

    def test_single_class_train(self):
        X = np.zeros((6, 2))
        with pytest.raises(SingleClassTrain):
            outcome_eval([0], X[:4], X[4:], (np.zeros(4), np.array([0, 1])))


class TestDescriptive:
    def test_histogram_all_ones(self):
        edges, counts = accuracy_histogram(np.ones(50))
        assert counts[-1] == 50 and counts[:-1].sum() == 0 and len(edges) == 21

    def test_histogram_uniform(self):
        a = np.random.default_rng(0).random(10_000)
        _, counts = accuracy_histogram(a)
        mu, sd = 500, np.sqrt(10_000 * 0.05 * 0.95)
        assert np.all(np.abs(counts - mu) < 3 * sd)
        assert counts.sum() == 10_000

    def test_histogram_range_checked(self):
        with pytest.raises(ValueError):
            accuracy_histogram([1.2])

    def test_prevalence_full_column(self):
        bm = BinaryMatrix(sp.csr_matrix(np.array([[1, 0], [1, 1]], dtype=np.uint8)), ["A", "B"])
        assert prevalence_report(bm, 2) == [("A", 100.0), ("B", 50.0)]

    def test_prevalence_recount(self, small_cohort, sample_tree):
        ds = encode_cohort(small_cohort.admissions, small_cohort.deaths, sample_tree, SplitSpec())
        windows = aggregate_windows(small_cohort.admissions)
        counts = {}
        for w in windows:
            closed = set()
            for c in w.code_set:
                closed |= {c, *sample_tree.ancestors(c)}
            for c in closed:
                counts[c] = counts.get(c, 0) + 1
        rows = prevalence_report(ds.matrix, 20)
        assert len(rows) == 20
        for code, pct in rows:
            assert pct == pytest.approx(100.0 * counts[code] / len(windows), rel=1e-12)
        pcts = [p for _, p in rows]
        assert pcts == sorted(pcts, reverse=True)

    def test_chapters_dominate_descendants(self, small_cohort, sample_tree):
        ds = encode_cohort(small_cohort.admissions, small_cohort.deaths, sample_tree, SplitSpec())
        pct = dict(prevalence_report(ds.matrix, ds.matrix.n_cols))
        for code, p in pct.items():
            for anc in sample_tree.ancestors(code):
                assert pct[anc] >= p

    def test_depth_sum(self, sample_tree):
        assert depth_sum(["IX", "I20-I25", "I251"], sample_tree) == 4
        assert depth_sum(sample_tree.chapters(), sample_tree) == 0
        sel = SelectionResult("pfa", [1, 0], np.zeros(2), feature_codes=["IX", "I251"])
        assert depth_sum(sel, sample_tree) == 3
        with pytest.raises(UnknownCode):
            depth_sum(["nope"], sample_tree)


class TestWriters:
    def test_tables_and_json(self):
        rng = np.random.default_rng(0)
        tr, te = binary(rng, 60, 4), binary(rng, 20, 4)
        y = np.array([0, 1] * 30)
        sel = SelectionResult("mcfs", [0, 3], np.zeros(4), seed=2)
        r = reconstruct_eval(sel, tr, te, EvalConfig(epochs=1))
        o = outcome_eval(sel, tr, te, (y, y[:20]), EvalConfig(outcome_epochs=1))
        t1 = table1_csv([r]).splitlines()
        assert t1[0].startswith("method,n_selected,mean_accuracy,bce")
        assert t1[1].startswith("mcfs,2,")
        assert table2_csv([o]).splitlines()[1].startswith("mcfs,")
        doc = json.loads(report_json(r, o, {"extra": 1}))
        assert doc["format"] == "icdfs-report/1" and doc["extra"] == 1
        assert len(doc["reconstruction"]["per_feature_accuracy"]) == 4
        edges, counts = accuracy_histogram(r.per_feature_accuracy, 4)
        assert len(histogram_csv(edges, counts, "mcfs").splitlines()) == 5


# ---------------------------------------------------------------------------
# desk-scale checks
# ---------------------------------------------------------------------------


def informative_closure(cohort, tree):
    return set(cohort.ground_truth) | {a for g in cohort.ground_truth for a in tree.ancestors(g)}


@pytest.mark.slow
class TestDeskScale:
    def test_all_features_at_least_mode(self, desk_cohorts):
        for seed in range(10):
            _, ds, split = desk_cohorts(seed)
            every = np.arange(split.train.n_cols)
            r = reconstruct_eval(every, split.train, split.test,
                                 EvalConfig(seed=seed, dtype="float32"))
            assert r.mean_accuracy >= r.baseline_mean_accuracy

    def test_constant_column_matches_column_mean_predictor(self, desk_cohorts):
        _, _, split = desk_cohorts(0)
        tr = sp.hstack([split.train.data, sp.csr_matrix((split.train.n_rows, 1))]).tocsr()
        te = sp.hstack([split.test.data, sp.csr_matrix((split.test.n_rows, 1))]).tocsr()
        r = reconstruct_eval([tr.shape[1] - 1], tr, te, EvalConfig(seed=0, dtype="float32"))
        assert abs(r.bce / r.baseline_bce - 1) < 0.02

    def test_without_informative_columns_near_majority(self, desk_cohorts, sample_tree):
        # Expected to fail: training on an upsampled (balanced) split pulls an
        # uninformative model towards coin-flip predictions, far below the
        # majority rate. See the decisions ledger.
        for seed in range(10):
            cohort, ds, split = desk_cohorts(seed)
            bad = informative_closure(cohort, sample_tree)
            keep = [j for j, c in enumerate(ds.matrix.feature_index) if c not in bad]
            sel = np.random.default_rng(seed).choice(keep, size=100, replace=False)
            r = outcome_eval(np.sort(sel), split.train, split.test,
                             (split.train_labels, split.test_labels), EvalConfig(seed=seed))
            assert abs(r.accuracy - r.majority_rate) <= 0.05
