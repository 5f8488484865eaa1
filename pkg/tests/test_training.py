"""Tests for the optimizer, schedules, averaging, early stop and the epoch loop."""

import csv

import numpy as np
import pytest

from tripath import tensor as T
from tripath.data import CLASS_NT, CLASS_T, DatasetSplit, VideoClip
from tripath.errors import ContractError, ParamError, TrainingAbort
from tripath.losses import build_loss
from tripath.model import ModelConfig, MultiPathNet, load_checkpoint
from tripath.training import (
    AccumulationConfig,
    AdamW,
    CyclicSchedule,
    EarlyStopState,
    SWAState,
    TrainConfig,
    evaluate_split,
    fit,
    train_epoch,
)


def tiny_config(**overrides):
    base = dict(depth=18, slow_width=8, beta=0.25, regular_width=8, alpha=4)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed=0, **overrides):
    return MultiPathNet(tiny_config(**overrides), rng=np.random.default_rng(seed))


def make_videos(n, seed=0, frames=8, size=32):
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        data = rng.integers(0, 256, size=(frames, size, size), dtype=np.uint8)
        label = CLASS_T if i % 2 == 0 else CLASS_NT
        clips.append(VideoClip(data, label, f"clip{i:03d}"))
    return clips


class TestAdamW:
    def test_matches_hand_stepped_reference(self):
        rng = np.random.default_rng(0)
        p0 = rng.normal(size=4).astype(np.float32)
        p = T.Tensor(p0.copy(), requires_grad=True)
        lr, wd, b1, b2, eps = 0.1, 0.04, 0.9, 0.999, 1e-8
        opt = AdamW([("w", p)], lr=lr, betas=(b1, b2), epsilon=eps, weight_decay=wd)

        ref = p0.copy()
        m = np.zeros(4, dtype=np.float32)
        v = np.zeros(4, dtype=np.float32)
        for t in (1, 2, 3):
            g = rng.normal(size=4).astype(np.float32)
            p.grad = g.copy()
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            ref = ref - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * wd * ref
            np.testing.assert_allclose(p.data, ref, rtol=1e-6)

    def test_decay_is_decoupled_from_gradient(self):
        p = T.Tensor(np.full(3, 2.0, dtype=np.float32), requires_grad=True)
        opt = AdamW([("w", p)], lr=0.5, weight_decay=0.1)
        opt.step()
        # zero gradient leaves only the decay term: p -= lr * wd * p
        np.testing.assert_allclose(p.data, 2.0 - 0.5 * 0.1 * 2.0, rtol=1e-6)

    def test_zero_decay_leaves_params_with_zero_grad(self):
        p = T.Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        opt = AdamW([("w", p)], lr=0.5, weight_decay=0.0)
        opt.step()
        np.testing.assert_array_equal(p.data, np.ones(3, dtype=np.float32))

    def test_lr_override_per_step(self):
        p = T.Tensor(np.ones(1, dtype=np.float32), requires_grad=True)
        opt = AdamW([("w", p)], lr=1.0, weight_decay=0.5)
        opt.step(lr_now=0.1)
        np.testing.assert_allclose(p.data, 1.0 - 0.1 * 0.5, rtol=1e-6)

    def test_zero_grads(self):
        p = T.Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        p.grad = np.ones(2, dtype=np.float32)
        opt = AdamW([("w", p)])
        opt.zero_grads()
        assert p.grad is None

    def test_gradient_shape_mismatch_rejected(self):
        p = T.Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        p.grad = np.ones(3, dtype=np.float32)
        with pytest.raises(ContractError):
            AdamW([("w", p)]).step()

    def test_validation(self):
        p = T.Tensor(np.ones(1), requires_grad=True)
        with pytest.raises(ParamError):
            AdamW([("w", p)], betas=(1.0, 0.999))
        with pytest.raises(ParamError):
            AdamW([("w", p)], lr=0.0)
        with pytest.raises(ParamError):
            AdamW([("w", p)], weight_decay=-0.1)


class TestCyclicSchedule:
    def test_endpoints_peak_and_period(self):
        sched = CyclicSchedule(base_lr=1e-5, max_lr=1e-4, half_period_steps=10)
        assert sched.lr_at(0) == 1e-5
        assert sched.lr_at(10) == 1e-4
        assert sched.lr_at(20) == 1e-5
        assert sched.lr_at(5) == pytest.approx(1e-5 + 0.5 * 9e-5)
        assert sched.lr_at(15) == pytest.approx(1e-4 - 0.5 * 9e-5)
        for s in (0, 3, 7, 13):
            assert sched.lr_at(s) == pytest.approx(sched.lr_at(s + 20))

    def test_validation(self):
        with pytest.raises(ParamError):
            CyclicSchedule(base_lr=1e-4, max_lr=1e-4)
        with pytest.raises(ParamError):
            CyclicSchedule(half_period_steps=0)
        with pytest.raises(ParamError):
            CyclicSchedule(mode="exp_range")
        with pytest.raises(ParamError):
            CyclicSchedule().lr_at(-1)


class TestAccumulationConfig:
    def test_effective_batch(self):
        assert AccumulationConfig(4, 8).effective_batch == 32

    def test_validation(self):
        with pytest.raises(ParamError):
            AccumulationConfig(0, 8)
        with pytest.raises(ParamError):
            AccumulationConfig(4, 0)


class TestSWAState:
    def test_skips_before_start_epoch(self):
        swa = SWAState(start_epoch=3)
        assert swa.update({"w": np.ones(2, np.float32)}, epoch=2) is False
        assert swa.count == 0
        assert swa.update({"w": np.ones(2, np.float32)}, epoch=3) is True
        assert swa.count == 1

    def test_average_equals_offline_float64_mean(self):
        rng = np.random.default_rng(0)
        snaps = [{"w": rng.normal(size=(3, 4)).astype(np.float32)} for _ in range(5)]
        swa = SWAState(start_epoch=1)
        for i, s in enumerate(snaps, start=1):
            swa.update(s, epoch=i)
        offline = sum(s["w"].astype(np.float64) for s in snaps) / 5
        np.testing.assert_array_equal(swa.average()["w"], offline.astype(np.float32))

    def test_empty_average_rejected(self):
        with pytest.raises(ContractError):
            SWAState().average()


class TestEarlyStopState:
    def test_stops_at_exactly_patience_increases(self):
        stopper = EarlyStopState(patience=3)
        losses = [1.0, 0.9, 1.0, 1.1, 1.2]
        stops = [stopper.observe(v, 0.5, i)[0] for i, v in enumerate(losses, 1)]
        assert stops == [False, False, False, False, True]

    def test_any_non_increase_resets_counter(self):
        stopper = EarlyStopState(patience=2)
        # the equal value at epoch 3 resets the streak
        for i, v in enumerate([1.0, 1.1, 1.1, 1.2], 1):
            stop, _ = stopper.observe(v, 0.5, i)
        assert stop is False
        assert stopper.counter == 1

    def test_best_requires_strict_improvement(self):
        stopper = EarlyStopState()
        flags = [stopper.observe(1.0, acc, i)[1]
                 for i, acc in enumerate([0.5, 0.5, 0.6, 0.6], 1)]
        assert flags == [True, False, True, False]
        assert stopper.best_epoch == 3
        assert stopper.best_accuracy == 0.6

    def test_patience_validation(self):
        with pytest.raises(ParamError):
            EarlyStopState(patience=0)


class TestTrainConfig:
    def test_dict_roundtrip(self):
        cfg = TrainConfig(max_epochs=7, class_weights=(2.0, 1.0), stop_at_val_accuracy=0.9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_default_effective_batch_is_32(self):
        assert TrainConfig().accumulation.effective_batch == 32

    def test_build_loss_fn_matches_build_loss(self):
        cfg = TrainConfig(loss="focal", gamma=2.0, class_weights=(1.25, 0.833))
        direct = build_loss("focal", gamma=2.0, class_weights=(1.25, 0.833))
        probs = T.softmax(T.Tensor(np.random.default_rng(0).normal(size=(4, 2))))
        labels = np.array([0, 1, 0, 1])
        assert float(cfg.build_loss_fn()(probs, labels).data) == float(direct(probs, labels).data)

    def test_validation(self):
        with pytest.raises(ParamError):
            TrainConfig(max_epochs=0)
        with pytest.raises(ParamError):
            TrainConfig(micro_batch=0)
        with pytest.raises(ParamError):
            TrainConfig(clip_len=0)


class TestTrainEpoch:
    def run_one(self, accum, videos, seed=3, model_seed=0, float64=False):
        model = tiny_model(model_seed)
        if float64:
            for _, p in model.named_parameters():
                p.data = p.data.astype(np.float64)
        opt = AdamW(model.named_parameters(), lr=1e-3, weight_decay=0.0)
        sched = CyclicSchedule(1e-4, 1e-3, half_period_steps=4)
        loss_fn = build_loss("focal", gamma=2.0, class_weights=(1.25, 0.833))
        mean_loss, steps = train_epoch(model, videos, loss_fn, opt, accum, sched,
                                       epoch=1, seed=seed, clip_len=8)
        return model, mean_loss, steps

    def test_window_math_and_determinism(self):
        videos = make_videos(10)
        model_a, loss_a, steps = self.run_one(AccumulationConfig(2, 2), videos)
        model_b, loss_b, _ = self.run_one(AccumulationConfig(2, 2), videos)
        # 10 videos, effective batch 4: two full windows, two clips unused
        assert steps == 2
        assert loss_a == loss_b
        for (na, pa), (nb, pb) in zip(model_a.named_parameters(), model_b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_accumulated_step_matches_single_large_batch(self):
        # float64 parameters isolate the algebraic equivalence from BLAS
        # reduction-order noise, which the optimizer's epsilon region
        # amplifies machine-dependently at float32
        videos = make_videos(8)
        small, _, steps_small = self.run_one(AccumulationConfig(2, 4), videos, float64=True)
        large, _, steps_large = self.run_one(AccumulationConfig(8, 1), videos, float64=True)
        assert steps_small == steps_large == 1
        for (name, pa), (_, pb) in zip(small.named_parameters(), large.named_parameters()):
            rel = np.max(np.abs(pa.data - pb.data) / np.maximum(np.abs(pb.data), 1e-12))
            assert rel < 1e-5, f"{name}: accumulation drift {rel:.2e}"

    def test_too_few_videos_rejected(self):
        videos = make_videos(3)
        with pytest.raises(ParamError):
            self.run_one(AccumulationConfig(2, 2), videos)

    def test_non_finite_loss_aborts_with_context(self):
        videos = make_videos(4)
        model = tiny_model()
        opt = AdamW(model.named_parameters(), lr=1e-3)
        sched = CyclicSchedule(1e-4, 1e-3, half_period_steps=4)

        def bad_loss(probs, labels):
            return T.tensor_sum(probs) * float("nan")

        with pytest.raises(TrainingAbort) as info:
            train_epoch(model, videos, bad_loss, opt, AccumulationConfig(2, 2), sched,
                        epoch=1, seed=0, clip_len=8, step_offset=7)
        assert info.value.step == 7
        assert info.value.lr == sched.lr_at(7)


class TestEvaluateSplit:
    def test_tied_logits_predict_nt(self):
        model = tiny_model()
        for name, p in model.named_parameters():
            if name.startswith("head"):
                p.data = np.zeros_like(p.data)
        videos = make_videos(6)
        loss_fn = build_loss("cross_entropy")
        _, acc = evaluate_split(model, videos, loss_fn, clip_len=8)
        want = sum(1 for v in videos if v.label == CLASS_NT) / len(videos)
        assert acc == pytest.approx(want)

    def test_gradient_free_and_deterministic(self):
        model = tiny_model()
        videos = make_videos(5)
        loss_fn = build_loss("focal")
        out1 = evaluate_split(model, videos, loss_fn, micro_batch=2, clip_len=8)
        out2 = evaluate_split(model, videos, loss_fn, micro_batch=2, clip_len=8)
        assert out1 == out2
        assert all(p.grad is None for _, p in model.named_parameters())
        assert model.training is False

    def test_empty_split_rejected(self):
        with pytest.raises(ParamError):
            evaluate_split(tiny_model(), [], build_loss("focal"))


@pytest.fixture(scope="module")
def fit_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    clips = make_videos(16)
    split = DatasetSplit(fold=0,
                         train=tuple(c.id for c in clips[:12]),
                         validation=tuple(c.id for c in clips[12:]),
                         test=())
    config = TrainConfig(max_epochs=3, micro_batch=2, accumulation_steps=2,
                         half_period_epochs=1, clip_len=8, seed=5)
    model = tiny_model()
    result = fit(model, clips, split, config, out)
    return model, result, out


class TestFit:
    def test_log_matches_csv_on_disk(self, fit_run):
        _, result, out = fit_run
        with open(out / "epochs.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows == [{k: str(v) for k, v in r.items()} for r in result.log]
        assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
        assert [r["stopped"] for r in rows] == ["0", "0", "1"]

    def test_best_epoch_is_accuracy_argmax(self, fit_run):
        _, result, _ = fit_run
        accs = [float(r["val_acc"]) for r in result.log]
        # strictly-greater updates keep the first epoch that reaches the max
        assert result.best_epoch == accs.index(max(accs)) + 1
        assert result.best_val_accuracy == pytest.approx(max(accs))

    def test_best_checkpoint_restores_recorded_accuracy(self, fit_run):
        _, result, out = fit_run
        model, meta = load_checkpoint(out / "best.ckpt")
        assert meta["epoch"] == result.best_epoch
        assert meta["val_accuracy"] == pytest.approx(result.best_val_accuracy)
        assert model.config == tiny_config()

    def test_swa_before_warmup_snapshots_final_weights(self, fit_run):
        trained, result, out = fit_run
        # three epochs never reach the averaging warmup, so the SWA
        # checkpoint degenerates to the final parameters
        swa_model, _ = load_checkpoint(result.swa_checkpoint)
        final = trained.state_dict()
        for name, arr in swa_model.state_dict().items():
            np.testing.assert_array_equal(arr, final[name])

    def test_unknown_split_ids_rejected(self, tmp_path):
        clips = make_videos(8)
        split = DatasetSplit(fold=0, train=("ghost",), validation=(clips[0].id,), test=())
        with pytest.raises(ParamError):
            fit(tiny_model(), clips, split, TrainConfig(max_epochs=1, clip_len=8), tmp_path)

    def test_accuracy_target_stops_after_first_epoch(self, tmp_path):
        clips = make_videos(10)
        split = DatasetSplit(fold=0,
                             train=tuple(c.id for c in clips[:8]),
                             validation=tuple(c.id for c in clips[8:]),
                             test=())
        config = TrainConfig(max_epochs=5, micro_batch=2, accumulation_steps=2,
                             half_period_epochs=1, clip_len=8, seed=1,
                             stop_at_val_accuracy=0.0)
        result = fit(tiny_model(), clips, split, config, tmp_path)
        assert result.stopped_epoch == 1
        assert len(result.log) == 1
