import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import kanspoof.train as train_mod
from kanspoof.checkpoint import (
    IncompatibleCheckpointError,
    decode_state,
    encode_state,
    load_checkpoint,
    load_into,
    save_checkpoint,
)
from kanspoof.data import FormatError, SyntheticGenConfig, split_records, synth_generate
from kanspoof.kanformer import ModelConfig, build_model, classify
from kanspoof.numerics import ConfigurationError, Parameter, backward, ops
from kanspoof.train import (
    AdamState,
    EarlyStopping,
    NonFiniteGradientError,
    Snapshot,
    TopK,
    TrainConfig,
    TrainReport,
    adam_step,
    class_weights,
    predict,
    train_loop,
)

TINY = ModelConfig(feature_dim=4, model_dim=8, heads=2, blocks=1, ff_expansion=2, cheby_degree=2, depthwise_kernel=3)


@pytest.fixture(scope="module")
def tiny_splits():
    return split_records(synth_generate(SyntheticGenConfig(n_per_class=20, T=12, D=4, seed=5)), 5)


class TestAdam:
    def test_zero_gradient_no_decay(self, rng):
        p = Parameter(rng.normal(size=4))
        before = p.data.copy()
        adam_step([p], AdamState(), TrainConfig(weight_decay=0.0))
        np.testing.assert_array_equal(p.data, before)

    def test_zero_learning_rate(self, rng):
        p = Parameter(rng.normal(size=4))
        p.grad = rng.normal(size=4)
        before = p.data.copy()
        adam_step([p], AdamState(), TrainConfig(learning_rate=0.0))
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_is_sign_step(self):
        p = Parameter(np.zeros(3))
        p.grad = np.array([0.3, -5.0, 2.0])
        adam_step([p], AdamState(), TrainConfig(learning_rate=0.01, weight_decay=0.0))
        np.testing.assert_allclose(p.data, -0.01 * np.sign(p.grad), rtol=1e-5)

    def test_decoupled_weight_decay(self):
        p = Parameter(np.array([2.0]))
        adam_step([p], AdamState(), TrainConfig(learning_rate=0.1, weight_decay=0.5))
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_quadratic_bowl(self):
        p = Parameter(np.array([1.0, -2.0, 0.5]))
        state, cfg = AdamState(), TrainConfig(learning_rate=0.1, weight_decay=0.0)
        for _ in range(200):
            p.grad = 2 * p.data
            adam_step([p], state, cfg)
        assert np.linalg.norm(p.data) < 1e-3

    def test_non_finite_gradient_moves_nothing(self):
        a, b = Parameter(np.ones(2), name="a"), Parameter(np.ones(2), name="blocks.0.w")
        a.grad = np.ones(2)
        b.grad = np.array([1.0, np.nan])
        with pytest.raises(NonFiniteGradientError, match="blocks.0.w"):
            adam_step([a, b], AdamState(), TrainConfig())
        np.testing.assert_array_equal(a.data, 1.0)


class TestEarlyStopping:
    def test_increasing_loss_stops_after_patience_plus_one(self):
        stop = EarlyStopping(7)
        epochs = [e for e in range(1, 20) if stop.update(float(e))]
        assert epochs[0] == 8

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.integers(1, 8))
    def test_never_before_patience_plus_one(self, losses, patience):
        stop = EarlyStopping(patience)
        for epoch, loss in enumerate(losses, start=1):
            if stop.update(loss):
                assert epoch >= patience + 1
                break


class TestTopK:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5]), st.floats(0, 2)), min_size=1, max_size=25))
    def test_matches_full_resort(self, history):
        tk = TopK(5)
        snaps = []
        for epoch, (eer, loss) in enumerate(history, start=1):
            snap = Snapshot(epoch, eer, loss, {})
            snaps.append(snap)
            tk.offer(snap)
            expected = sorted(snaps, key=lambda s: (s.dev_eer, s.dev_loss, s.epoch))[:5]
            assert [s.epoch for s in tk.items] == [s.epoch for s in expected]


class TestClassWeights:
    def test_balanced(self):
        np.testing.assert_array_equal(class_weights(np.array([0, 1, 1, 0])), [1.0, 1.0])

    def test_inverse_frequency(self):
        np.testing.assert_allclose(class_weights(np.array([0, 0, 0, 1])), [4 / 6, 2.0])


class TestTrainLoop:
    def test_single_epoch(self, tiny_splits):
        model = build_model(TINY)
        report, best = train_loop(model, tiny_splits, TrainConfig(max_epochs=1, batch_size=8), 12)
        assert len(report.epochs) == 1 and len(best) == 1 and len(report.top_k) == 1
        assert report.stop_reason == "max_epochs"
        assert {"train_loss", "dev_loss", "dev_eer", "eval_eer"} <= set(report.epochs[0])

    def test_empty_split(self, tiny_splits):
        splits = dict(tiny_splits, dev=type(tiny_splits["dev"])([], "dev"))
        with pytest.raises(ConfigurationError):
            train_loop(build_model(TINY), splits, TrainConfig(max_epochs=1), 12)

    def test_rising_dev_loss_stops_at_patience_plus_one(self, tiny_splits, monkeypatch):
        calls = iter(range(1000))
        monkeypatch.setattr(train_mod, "evaluate_split", lambda *a, **k: {"loss": float(next(calls)), "eer": 0.5})
        report, _ = train_loop(build_model(TINY), tiny_splits, TrainConfig(max_epochs=30, patience=3, batch_size=28), 12)
        assert report.stopped_epoch == 4 and report.stop_reason == "early_stopping"

    def test_metric_and_weight_averaging(self, tiny_splits):
        cfg = TrainConfig(max_epochs=3, top_k=2, batch_size=8, averaging="weights")
        report, best = train_loop(build_model(TINY), tiny_splits, cfg, 12)
        assert len(best) == 2
        assert report.averaged["dev_eer"] == pytest.approx(np.mean([s.dev_eer for s in best]))
        assert set(report.weight_averaged) >= {"dev_eer", "eval_eer"}

    def test_model_left_at_best_snapshot(self, tiny_splits):
        model = build_model(TINY)
        _, best = train_loop(model, tiny_splits, TrainConfig(max_epochs=3, batch_size=8), 12)
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, best[0].state[name])

    def test_deterministic(self, tiny_splits):
        cfg = TrainConfig(max_epochs=2, batch_size=8)
        a, _ = train_loop(build_model(TINY, 1), tiny_splits, cfg, 12)
        b, _ = train_loop(build_model(TINY, 1), tiny_splits, cfg, 12)
        assert a.to_dict() == b.to_dict()
        assert TrainReport.from_dict(a.to_dict()) == a

    def test_first_batch_loss_decreases(self):
        # default desk-scale model on the default toy task, first mini-batch
        splits = split_records(synth_generate(SyntheticGenConfig()), 0)
        x, y = splits["train"].arrays(200)
        idx = np.random.default_rng(0).permutation(len(x))[:16]
        model = build_model(ModelConfig(), seed=0)
        params, state, cfg = model.parameters(), AdamState(), TrainConfig()
        w = class_weights(y)
        losses = []
        for _ in range(20):
            model.zero_grad()
            loss = ops.cross_entropy(classify(model, x[idx])[0], y[idx], w)
            backward(loss)
            adam_step(params, state, cfg)
            losses.append(loss.item())
        assert losses[-1] < losses[0]


class TestCheckpoint:
    def test_save_load_save_identical(self, tmp_path, tiny_splits):
        model = build_model(TINY, seed=2)
        train_loop(model, tiny_splits, TrainConfig(max_epochs=1, batch_size=8), 12)  # non-trivial BN stats
        save_checkpoint(model, tmp_path / "a.kfck")
        loaded = load_checkpoint(tmp_path / "a.kfck", TINY)
        save_checkpoint(loaded, tmp_path / "b.kfck")
        assert (tmp_path / "a.kfck").read_bytes() == (tmp_path / "b.kfck").read_bytes()
        x, _ = tiny_splits["eval"].arrays(12)
        assert predict(model, x)[1].tobytes() == predict(loaded, x)[1].tobytes()

    def test_mismatched_architecture(self, tmp_path):
        save_checkpoint(build_model(TINY), tmp_path / "a.kfck")
        other = ModelConfig(**{**TINY.__dict__, "kan_convolution": False})
        with pytest.raises(IncompatibleCheckpointError):
            load_checkpoint(tmp_path / "a.kfck", other)

    def test_hash_match_but_wrong_tensors(self, tmp_path):
        state = build_model(TINY).state_dict()
        state.pop(next(iter(state)))
        (tmp_path / "a.kfck").write_bytes(encode_state(state, TINY.hash()))
        with pytest.raises(IncompatibleCheckpointError):
            load_into(build_model(TINY), tmp_path / "a.kfck")

    def test_truncated(self, tmp_path):
        raw = encode_state(build_model(TINY).state_dict(), TINY.hash())
        with pytest.raises(FormatError, match="offset"):
            decode_state(raw[:-3])
        with pytest.raises(FormatError):
            decode_state(b"KFCK" + raw[4:20])

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="magic"):
            decode_state(b"NOPE" + bytes(40))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.kfck", TINY)

    def test_layout(self):
        raw = encode_state({"w": np.arange(6.0).reshape(2, 3)}, bytes(range(32)))
        assert raw[:4] == b"KFCK" and raw[4:8] == b"\x01\x00\x00\x00" and raw[8:40] == bytes(range(32))
        h, state = decode_state(raw)
        np.testing.assert_array_equal(state["w"], np.arange(6.0).reshape(2, 3))
        assert len(raw) == 40 + 4 + 1 + 4 + 8 + 48


class TestTrainConfig:
    def test_presets(self):
        assert TrainConfig.preset("paper").learning_rate == 1e-6
        assert TrainConfig.preset("desk").learning_rate == 1e-3
        with pytest.raises(ConfigurationError):
            TrainConfig.preset("fast")

    def test_validate(self):
        with pytest.raises(ConfigurationError, match="patience"):
            TrainConfig(patience=0).validate()
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"lr": 0.1})
