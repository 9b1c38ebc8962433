"""Tests for the cyclic learning-rate schedule, the training loop, and
whole-segment prediction."""

import numpy as np
import pytest

from bpnet.data import RecordSegment, make_windows, synth_subject, extract_bp_targets, split_record
from bpnet.model import ModelConfig, build_bpnet
from bpnet.nn import Tensor, mse_loss
from bpnet.training import TrainConfig, lr_at_epoch, predict, train, write_history


def tiny_model(seed=0, dropout=0.0):
    config = ModelConfig(
        kernel_size=3,
        dilations=[1, 2],
        block_channels=[4, 4],
        input_stem_channels=4,
        head_channels=4,
        dropout_rate=dropout,
    )
    return build_bpnet(config, rng_seed=seed)


def tiny_windows(n_windows=4, window_len=64, seed=0):
    rng = np.random.default_rng(seed)
    segment = RecordSegment(
        subject_id="s",
        start_index=0,
        ecg=rng.normal(size=n_windows * window_len),
        ppg=rng.normal(size=n_windows * window_len),
        sbp=rng.uniform(100, 140, size=n_windows * window_len),
        dbp=rng.uniform(60, 90, size=n_windows * window_len),
    )
    return make_windows(segment, window_len=window_len, stride=window_len)


class TestLrSchedule:
    def test_paper_anchor_values(self):
        config = TrainConfig(epochs=1)
        assert lr_at_epoch(0, config) == 0.001
        assert lr_at_epoch(19, config) == 0.001
        assert lr_at_epoch(20, config) == 0.0005
        assert lr_at_epoch(99, config) == 0.001 / 16
        # the float product 0.9 * 0.001 is one ulp off the decimal literal
        # 0.0009; the exact identity is the cycle-start ratio
        assert lr_at_epoch(100, config) == 0.9 * 0.001
        assert abs(lr_at_epoch(100, config) - 0.0009) < 1e-18

    def test_cycle_start_ratio_exact(self):
        # iterated cycle-start multiplication keeps the quotient exactly 0.9
        # through epoch 500; beyond that IEEE rounding of the quotient may
        # drift by one ulp
        config = TrainConfig(epochs=1)
        for k in range(1, 6):
            start = lr_at_epoch(100 * k, config)
            prev = lr_at_epoch(100 * (k - 1), config)
            assert start / prev == 0.9

    def test_piecewise_constant_with_changes_at_multiples_of_20(self):
        config = TrainConfig(epochs=1)
        trace = np.array([lr_at_epoch(e, config) for e in range(300)])
        assert (trace > 0).all()
        changes = np.where(np.diff(trace) != 0)[0] + 1
        assert all(c % 20 == 0 for c in changes)

    def test_closed_form_over_300_epochs(self):
        config = TrainConfig(epochs=1)
        for epoch in range(300):
            cycles, pos = divmod(epoch, 100)
            expected = config.base_lr
            for _ in range(cycles):
                expected *= 0.9
            expected /= 2.0 ** (pos // 20)
            assert lr_at_epoch(epoch, config) == expected

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            lr_at_epoch(-1, TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, base_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, loss="mae")
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, cycle_len_epochs=100, halving_period_epochs=30)


class TestTrain:
    def test_one_epoch_decreases_loss(self):
        model = tiny_model()
        windows = tiny_windows()
        ecg = np.stack([w.ecg_window for w in windows])[:, None, :]
        ppg = np.stack([w.ppg_window for w in windows])[:, None, :]
        targets = np.stack([np.stack([w.sbp_target, w.dbp_target]) for w in windows])
        before = float(mse_loss(model.forward(Tensor(ecg), Tensor(ppg)), targets).data)
        model, _ = train(model, windows, [], TrainConfig(epochs=1, base_lr=0.01, batch_size=4))
        after = float(mse_loss(model.forward(Tensor(ecg), Tensor(ppg)), targets).data)
        assert after < before

    def test_lr_trace_matches_schedule(self):
        model = tiny_model()
        windows = tiny_windows(n_windows=1, window_len=32)
        config = TrainConfig(epochs=200, base_lr=0.001, batch_size=1)
        _, history = train(model, windows, [], config)
        assert history.lr == [lr_at_epoch(e, config) for e in range(200)]

    def test_deterministic_given_seed(self):
        runs = []
        for _ in range(2):
            model = tiny_model(seed=1, dropout=0.2)
            windows = tiny_windows(seed=2)
            model, history = train(
                model, windows, windows[:2], TrainConfig(epochs=3, batch_size=2, rng_seed=5)
            )
            runs.append(([p.data.copy() for p in model.parameters()], history.train_loss))
        for a, b in zip(runs[0][0], runs[1][0]):
            np.testing.assert_array_equal(a, b)
        assert runs[0][1] == runs[1][1]

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError, match="empty training set"):
            train(tiny_model(), [], [], TrainConfig(epochs=1))

    def test_partial_final_batch_kept(self):
        model = tiny_model()
        windows = tiny_windows(n_windows=5, window_len=32)
        _, history = train(model, windows, [], TrainConfig(epochs=1, batch_size=4))
        assert history.epochs() == 1  # 5 windows, batch 4: batches of 4 and 1

    def test_non_finite_loss_guard(self):
        model = tiny_model()
        model.parameters()[0].data[:] = np.inf
        with pytest.raises(FloatingPointError, match="non-finite"):
            train(model, tiny_windows(), [], TrainConfig(epochs=1, batch_size=2))

    def test_best_parameters_tracked(self):
        model = tiny_model()
        windows = tiny_windows()
        _, history = train(model, windows, windows[:2],
                           TrainConfig(epochs=3, base_lr=0.01, batch_size=2))
        assert 0 <= history.best_epoch < 3
        assert history.best_parameters is not None
        assert history.valid_loss[history.best_epoch] == min(history.valid_loss)

    def test_history_csv(self, tmp_path):
        model = tiny_model()
        _, history = train(model, tiny_windows(), [], TrainConfig(epochs=2, batch_size=2))
        path = tmp_path / "history.csv"
        write_history(path, history)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,lr,train_loss,valid_loss"
        assert len(lines) == 3
        assert lines[1].startswith("0,0.001,")


class TestPredict:
    def test_output_covers_segment(self):
        model = tiny_model()
        rng = np.random.default_rng(0)
        for n in (100, 1024, 1500):
            segment = RecordSegment(
                subject_id="s",
                start_index=0,
                ecg=rng.normal(size=n),
                ppg=rng.normal(size=n),
                sbp=np.full(n, 120.0),
                dbp=np.full(n, 80.0),
            )
            sbp, dbp = predict(model, segment, window_len=256)
            assert sbp.shape == dbp.shape == (n,)
            assert np.all(np.isfinite(sbp)) and np.all(np.isfinite(dbp))

    def test_windows_do_not_overlap(self):
        # predictions restart at each window boundary: predicting the same
        # segment with window_len n in one shot equals the segment pieces
        model = tiny_model()
        rng = np.random.default_rng(1)
        segment = RecordSegment("s", 0, rng.normal(size=512), rng.normal(size=512),
                                np.full(512, 110.0), np.full(512, 70.0))
        full_sbp, _ = predict(model, segment, window_len=256)
        first = RecordSegment("s", 0, segment.ecg[:256], segment.ppg[:256],
                              segment.sbp[:256], segment.dbp[:256])
        part_sbp, _ = predict(model, first, window_len=256)
        np.testing.assert_array_equal(full_sbp[:256], part_sbp)

    def test_brief_training_improves_over_initialization(self):
        # small but real end-to-end check: a few epochs on one synthetic
        # subject pull test error far below the untrained network's
        record, _ = synth_subject(3, duration_s=90.0)
        targets = extract_bp_targets(record.abp)
        train_seg, valid_seg, test_seg = split_record(record, targets)
        windows = make_windows(train_seg, window_len=512, stride=128)
        model = tiny_model(seed=2)
        sbp0, dbp0 = predict(model, test_seg, window_len=512)
        untrained_mae = np.abs(sbp0 - test_seg.sbp).mean() + np.abs(dbp0 - test_seg.dbp).mean()
        model, _ = train(model, windows, [],
                         TrainConfig(epochs=12, base_lr=0.004, batch_size=8, rng_seed=0))
        sbp, dbp = predict(model, test_seg, window_len=512)
        trained_mae = np.abs(sbp - test_seg.sbp).mean() + np.abs(dbp - test_seg.dbp).mean()
        assert trained_mae < untrained_mae / 2
