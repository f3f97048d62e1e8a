import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from laserphm import nn_core
from laserphm.degradation_sim import DegradationMode, generate_dataset
from laserphm.models import (
    CLASS_ORDER,
    DatasetError,
    FaultDetector,
    RulLabelSpec,
    RulPredictor,
    TrainConfig,
    label_curve,
    label_rul,
    load_detector,
    load_rul_predictor,
    new_detector,
    predict_mode,
    predict_rul,
    prepare_windows,
    rul_to_hours,
    save_model,
    stratified_split,
    train_detector,
    train_rul,
)

N, S, G = CLASS_ORDER


@pytest.fixture(scope="module")
def small_windows():
    return prepare_windows(generate_dataset((10, 10, 10), 7))


class TestLabelRul:
    def test_flat_branch(self):
        assert label_rul(40, RulLabelSpec.from_onset(50, 150)) == 1.0

    def test_failure(self):
        assert label_rul(150, RulLabelSpec.from_onset(50, 150)) == 0.0

    def test_midpoint(self):
        assert label_rul(100, RulLabelSpec.from_onset(50, 150)) == pytest.approx(0.5)

    def test_past_failure(self):
        with pytest.raises(ValueError):
            label_rul(151, RulLabelSpec.from_onset(50, 150))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            RulLabelSpec(1.0, 10)
        with pytest.raises(ValueError):
            RulLabelSpec(0.5, 0)

    @given(st.floats(0.01, 0.99), st.floats(1.0, 1e4))
    def test_shape(self, frac, t_f):
        spec = RulLabelSpec(frac, t_f)
        t = np.linspace(0, t_f, 200)
        labels = [label_rul(x, spec) for x in t]
        assert np.all(np.diff(labels) <= 0)
        assert label_rul(spec.tau, spec) == 1.0
        assert label_rul(t_f, spec) == 0.0

    def test_curve_matches_scalar(self):
        t = np.linspace(0, 300, 1001)
        curve = label_curve(t, 300.0, 0.6)
        spec = RulLabelSpec(0.6, 300.0)
        assert curve.tolist() == [label_rul(x, spec) for x in t]

    def test_curve_clips_after_failure(self):
        np.testing.assert_array_equal(label_curve([100.0, 101.0], 100.0), [0.0, 0.0])


class TestRulToHours:
    def test_examples(self):
        spec = RulLabelSpec.from_onset(50, 150)
        assert rul_to_hours(0, spec) == 0
        assert rul_to_hours(1, spec) == pytest.approx(100)
        assert rul_to_hours(label_rul(120, spec), spec) == pytest.approx(30)

    @given(st.floats(0.05, 0.95), st.floats(1.0, 1e5), st.floats(0, 1))
    def test_inverse(self, frac, t_f, u):
        spec = RulLabelSpec(frac, t_f)
        t = spec.tau + u * (t_f - spec.tau)
        assert rul_to_hours(label_rul(t, spec), spec) == pytest.approx(t_f - t, rel=1e-9, abs=1e-9 * t_f)

    def test_range(self):
        with pytest.raises(ValueError):
            rul_to_hours(1.5, RulLabelSpec(0.5, 10))


class TestSplit:
    def test_disjoint_stratified(self, small_windows):
        train, test = stratified_split(small_windows, 0.8, 42)
        train_ids = {w.source_id for w in train}
        test_ids = {w.source_id for w in test}
        assert not train_ids & test_ids
        assert len(train_ids | test_ids) == len(small_windows)
        for mode in CLASS_ORDER:
            assert sum(w.mode is mode for w in train) == 8
            assert sum(w.mode is mode for w in test) == 2

    def test_subset_consistent(self, small_windows):
        _, test = stratified_split(small_windows, 0.8, 42)
        gradual = [w for w in small_windows if w.mode is G]
        _, test_g = stratified_split(gradual, 0.8, 42)
        assert [w.source_id for w in test_g] == [w.source_id for w in test if w.mode is G]


class TestDetector:
    def test_architecture(self):
        net = new_detector().network
        assert len(net.layers) == 1 and net.layers[0].hidden_dim == 50
        assert net.input_dim == 4 and net.output_dim == 3
        with pytest.raises(ValueError):
            FaultDetector(nn_core.zeros_network(4, [10], 3, "softmax"))

    def test_zero_model_ties_to_normal(self, small_windows):
        model = FaultDetector(nn_core.zeros_network(4, [50], 3, "softmax", "fault-detector"))
        mode, probs = predict_mode(model, small_windows[0])
        assert mode is N
        np.testing.assert_allclose(probs, 1 / 3)

    def test_probabilities_sum(self, small_windows):
        _, probs = predict_mode(new_detector(3), small_windows[12])
        assert probs.sum() == pytest.approx(1, abs=1e-12)

    def test_permutation_covariant(self, small_windows):
        model = new_detector(5)
        perm = [2, 0, 1]
        permuted = model.network.copy()
        permuted.dense.W = permuted.dense.W[perm]
        permuted.dense.b = permuted.dense.b[perm]
        _, p = predict_mode(model, small_windows[3])
        _, q = predict_mode(FaultDetector(permuted), small_windows[3])
        np.testing.assert_allclose(q, p[perm], rtol=1e-12)

    def test_training_deterministic_and_learns(self, small_windows):
        cfg = TrainConfig(epochs=8, batch_size=8, seed=3)
        a, log_a = train_detector(small_windows, cfg)
        b, _ = train_detector(small_windows, cfg)
        for k, v in a.network.params().items():
            assert v.tobytes() == b.network.params()[k].tobytes()
        losses = [r.train_loss for r in log_a.records]
        assert np.all(np.isfinite(losses))
        assert losses[-1] < losses[0]
        assert len(log_a.records) == 8

    def test_missing_class(self, small_windows):
        windows = [w for w in small_windows if w.mode is not S]
        with pytest.raises(DatasetError):
            train_detector(windows, TrainConfig(epochs=1))

    def test_save_load(self, small_windows, tmp_path):
        model = new_detector(1)
        save_model(model, tmp_path / "d.json")
        loaded = load_detector(tmp_path / "d.json")
        assert predict_mode(model, small_windows[0])[1].tobytes() == \
            predict_mode(loaded, small_windows[0])[1].tobytes()
        with pytest.raises(nn_core.ModelFormatError):
            load_rul_predictor(tmp_path / "d.json", G)


class TestRulModel:
    def test_architecture(self, small_windows):
        model, _ = train_rul([w for w in small_windows if w.mode is G], G,
                             TrainConfig(epochs=1, batch_size=8))
        net = model.network
        assert [l.hidden_dim for l in net.layers] == [64, 32]
        assert net.purpose == "rul-gradual"
        assert model.mode is G

    def test_zero_model_outputs_half(self, small_windows):
        model = RulPredictor(nn_core.zeros_network(4, [64, 32], 1, "sigmoid"), S)
        curve, last = predict_rul(model, small_windows[10])
        assert curve.shape == (100,)
        np.testing.assert_array_equal(curve, 0.5)
        assert last == 0.5

    def test_deterministic(self, small_windows):
        windows = [w for w in small_windows if w.mode is S]
        cfg = TrainConfig(epochs=2, batch_size=4, seed=9)
        a, log_a = train_rul(windows, S, cfg)
        b, _ = train_rul(windows, S, cfg)
        for k, v in a.network.params().items():
            assert v.tobytes() == b.network.params()[k].tobytes()
        curve, _ = predict_rul(a, windows[0])
        assert np.all((curve > 0) & (curve < 1))
        assert log_a.metric_name == "holdout_rmse"

    def test_rejects_bad_windows(self, small_windows):
        with pytest.raises(DatasetError):
            train_rul(small_windows, G, TrainConfig(epochs=1))
        with pytest.raises(DatasetError):
            train_rul([w for w in small_windows if w.mode is N], N, TrainConfig(epochs=1))
        unlabeled = prepare_windows(generate_dataset((0, 0, 2), 1))
        unlabeled[0].step_rul_labels = None
        with pytest.raises(DatasetError):
            train_rul(unlabeled, G, TrainConfig(epochs=1))

    def test_training_log_csv(self, small_windows, tmp_path):
        _, log = train_rul([w for w in small_windows if w.mode is G], G,
                           TrainConfig(epochs=2, batch_size=8))
        path = tmp_path / "log.csv"
        log.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,holdout_metric"
        assert len(lines) == 3
