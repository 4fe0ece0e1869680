"""Training loop tests: loss, Adam, splits, determinism, resume."""

import numpy as np
import pytest

from trajformer import data, domain, model, synth, training
from trajformer import tensor as T
from trajformer.config import ConfigError
from trajformer.training import (
    AdamState,
    TrainConfig,
    _EpochSampler,
    adam_step,
    make_case_study_splits,
    mse_loss,
    split_counts,
    train,
    zero_grads,
)


def tiny_dataset(n_samples=12, seed=5, domain_label=data.DOMAIN_SOURCE):
    spec = synth.SynthSpec(lanes=2, vehicles=4, duration_s=60.0, seed=seed)
    source, _ = synth.synth_generate(spec)
    scaler = data.fit_scaler(data.all_coordinates(source))
    samples, _ = data.build_dataset(source, scaler, max_agents=1,
                                    domain=domain_label)
    assert len(samples) >= n_samples
    for s in samples:
        s.domain = domain_label
    return samples[:n_samples]


def tiny_cfg():
    return model.TransformerConfig(d_model=8, heads=2, ff_width=16,
                                   encoder_layers=1, decoder_layers=1,
                                   dropout=0.0, max_agents=1)


class TestMseLoss:
    def test_perfect_prediction_zero(self):
        x = np.zeros((2, 25, 3, 2))
        loss = mse_loss(T.Tensor(x), x, np.ones((2, 3)))
        assert loss.data.item() == 0.0

    def test_single_error_hand_value(self):
        truth = np.zeros((1, 25, 1, 2))
        pred = truth.copy()
        pred[0, 4, 0, 1] = 2.0
        loss = mse_loss(T.Tensor(pred), truth, np.ones((1, 1)))
        assert loss.data.item() == pytest.approx(4.0 / (25 * 2))

    def test_masked_agents_excluded(self):
        truth = np.zeros((1, 25, 2, 2))
        pred = truth.copy()
        pred[0, :, 1, :] = 100.0  # padding agent: must not count
        mask = np.array([[1.0, 0.0]])
        loss = mse_loss(T.Tensor(pred), truth, mask)
        assert loss.data.item() == 0.0

    def test_all_masked_rejected(self):
        x = np.zeros((1, 25, 1, 2))
        with pytest.raises(T.ContractError):
            mse_loss(T.Tensor(x), x, np.zeros((1, 1)))


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = {"w": T.Tensor(np.ones(3), requires_grad=True)}
        state = AdamState.fresh(p)
        zero_grads(p)
        adam_step(p, state, TrainConfig(learning_rate=0.1, steps=1))
        assert np.array_equal(p["w"].data, np.ones(3))

    def test_first_step_size_is_lr(self):
        # bias correction makes the first update lr * g / (|g| + eps)
        p = {"w": T.Tensor(np.zeros(2), requires_grad=True)}
        p["w"].grad = np.array([0.5, -3.0])
        state = AdamState.fresh(p)
        adam_step(p, state, TrainConfig(learning_rate=0.1, steps=1))
        assert np.allclose(p["w"].data, [-0.1, 0.1], atol=1e-7)

    def test_non_finite_gradient_names_param(self):
        p = {"bad.w": T.Tensor(np.zeros(2), requires_grad=True)}
        p["bad.w"].grad = np.array([np.nan, 0.0])
        state = AdamState.fresh(p)
        with pytest.raises(T.ContractError, match="bad.w"):
            adam_step(p, state, TrainConfig(steps=1))

    def test_update_deterministic(self):
        def run():
            p = {"w": T.Tensor(np.linspace(-1, 1, 5), requires_grad=True)}
            state = AdamState.fresh(p)
            for i in range(10):
                p["w"].grad = np.sin(np.arange(5.0) + i)
                adam_step(p, state, TrainConfig(learning_rate=0.01, steps=1))
            return p["w"].data
        assert np.array_equal(run(), run())


class TestSplits:
    def test_protocol_counts(self):
        assert split_counts("cross_city", "source", 5398) == (3602, 1796)
        assert split_counts("cross_city", "target", 7799) == (3897, 3902)
        assert split_counts("cross_period", "source", 6154) == (4104, 2050)
        assert split_counts("cross_period", "target", 8427) == (4211, 4216)

    def test_fraction_fallback(self):
        assert split_counts("custom", "source", 99) == (66, 33)
        assert split_counts("custom", "target", 10) == (5, 5)

    def test_protocol_counts_apply_to_real_split(self):
        samples = list(range(5398))
        splits = make_case_study_splits("cross_city", {"source": samples}, 0)
        assert len(splits["source_train"]) == 3602
        assert len(splits["source_test"]) == 1796

    def test_split_hygiene(self):
        samples = list(range(90))
        splits = make_case_study_splits(
            "custom", {"source": samples, "target": samples[:40]}, 1)
        train_set = set(splits["source_train"])
        test_set = set(splits["source_test"])
        assert not train_set & test_set
        assert train_set | test_set == set(samples)
        assert len(splits["target_train"]) == 20
        assert len(splits["target_test"]) == 20

    def test_split_deterministic(self):
        samples = list(range(50))
        a = make_case_study_splits("custom", {"source": samples}, 3)
        b = make_case_study_splits("custom", {"source": samples}, 3)
        assert a["source_train"] == b["source_train"]
        c = make_case_study_splits("custom", {"source": samples}, 4)
        assert a["source_train"] != c["source_train"]

    def test_empty_domain_rejected(self):
        with pytest.raises(ConfigError):
            make_case_study_splits("custom", {"source": []}, 0)


class TestEpochSampler:
    def test_each_epoch_is_permutation(self):
        s = _EpochSampler(0, "shuffle", 7)
        first = s.take(0, 7)
        second = s.take(7, 7)
        assert sorted(first) == list(range(7))
        assert sorted(second) == list(range(7))
        assert first != second  # overwhelmingly likely for a real shuffle

    def test_resume_from_offset_matches(self):
        full = _EpochSampler(9, "shuffle", 5).take(0, 20)
        resumed = _EpochSampler(9, "shuffle", 5).take(12, 8)
        assert full[12:] == resumed


class TestTrainLoop:
    def test_smoke_loss_decreases(self):
        samples = tiny_dataset()
        tc = TrainConfig(learning_rate=1e-3, batch_size=4, steps=30, seed=0)
        _, rows = train(tiny_cfg(), tc, samples)
        assert len(rows) == 30
        assert rows[-1][1] < rows[0][1]

    def test_dat_requires_target(self):
        samples = tiny_dataset()
        tc = TrainConfig(steps=1, dat=domain.DatConfig(enabled=True))
        with pytest.raises(ConfigError):
            train(tiny_cfg(), tc, samples)

    def test_metrics_log_dat_off_leaves_bce_empty(self, tmp_path):
        samples = tiny_dataset()
        path = tmp_path / "metrics.csv"
        tc = TrainConfig(learning_rate=1e-3, batch_size=4, steps=3, seed=0)
        train(tiny_cfg(), tc, samples, metrics_path=str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,mse,bce,disc_accuracy,wall_ms"
        assert len(lines) == 4
        step, mse, bce, acc, wall = lines[1].split(",")
        assert step == "0" and float(mse) > 0
        assert bce == "" and acc == ""

    def test_dat_on_logs_bce_and_accuracy(self, tmp_path):
        src = tiny_dataset(8, seed=5)
        tgt = tiny_dataset(8, seed=6, domain_label=data.DOMAIN_TARGET)
        path = tmp_path / "metrics.csv"
        tc = TrainConfig(learning_rate=1e-3, batch_size=4, steps=3, seed=0,
                         dat=domain.DatConfig(grl_lambda=1.0, enabled=True))
        train(tiny_cfg(), tc, src, tgt, metrics_path=str(path))
        lines = path.read_text().strip().splitlines()
        _, _, bce, acc, _ = lines[1].split(",")
        assert float(bce) > 0
        assert 0.0 <= float(acc) <= 1.0

    def test_resume_reproduces_run_bitwise(self, tmp_path):
        samples = tiny_dataset()
        cfg = tiny_cfg()
        ckpt = tmp_path / "ckpt.bin"

        tc_full = TrainConfig(learning_rate=1e-3, batch_size=4, steps=6, seed=0)
        _, rows_full = train(cfg, tc_full, samples)

        tc_half = TrainConfig(learning_rate=1e-3, batch_size=4, steps=3,
                              seed=0, checkpoint_every=3)
        train(cfg, tc_half, samples, checkpoint_path=str(ckpt))
        _, rows_resumed = train(cfg, tc_full, samples, resume_from=str(ckpt))

        assert [r[0] for r in rows_resumed] == [3, 4, 5]
        for full, resumed in zip(rows_full[3:], rows_resumed):
            assert full[1] == resumed[1]  # bitwise-equal mse

    def test_resume_config_mismatch_rejected(self, tmp_path):
        samples = tiny_dataset()
        ckpt = tmp_path / "ckpt.bin"
        tc = TrainConfig(learning_rate=1e-3, batch_size=4, steps=2, seed=0,
                         checkpoint_every=2)
        train(tiny_cfg(), tc, samples, checkpoint_path=str(ckpt))
        other = model.TransformerConfig(d_model=16, heads=2, ff_width=16,
                                        encoder_layers=1, decoder_layers=1,
                                        dropout=0.0, max_agents=1)
        with pytest.raises(model.CheckpointError):
            train(other, tc, samples, resume_from=str(ckpt))
