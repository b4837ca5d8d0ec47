"""Decision transformer: masking semantics, training, inference."""

from __future__ import annotations

import numpy as np
import pytest

from dro.nn import Tape, backward, mse
from dro.trajectory import TrajStep, TrajectorySet
from dro.transformer import DtConfig, DtModel, dt_forward, dt_infer, dt_train, load_dt, save_dt

TINY = DtConfig(
    state_dim=4, action_dim=2, embed_dim=16, n_heads=2, n_layers=1,
    dropout=0.0, seq_len=6, lr=1e-2, weight_decay=0.0, batch_size=8, epochs=10,
)


def _random_batch(rng, b, t, cfg):
    rtg = rng.random((b, t, 1))
    states = rng.standard_normal((b, t, cfg.state_dim))
    actions = rng.random((b, t, cfg.action_dim))
    return rtg, states, actions


def _synthetic_trajs(rng, n_traj, lengths, cfg, action=None):
    trajs = []
    for _ in range(n_traj):
        t = int(rng.choice(lengths))
        steps = []
        rtg = 1.0
        for _ in range(t):
            a = action if action is not None else rng.random(cfg.action_dim)
            steps.append(
                TrajStep(state=rng.standard_normal(cfg.state_dim), action=np.asarray(a), rtg=rtg)
            )
            rtg = max(0.0, rtg - 0.1)
        trajs.append(tuple(steps))
    return TrajectorySet(trajectories=tuple(trajs), normalizer=1.0)


class TestForward:
    def test_untrained_predicts_center(self):
        model = DtModel(TINY, seed=0)
        rng = np.random.default_rng(1)
        rtg, states, actions = _random_batch(rng, 2, 3, TINY)
        preds = dt_forward(model, rtg, states, actions)
        np.testing.assert_allclose(preds.data, 0.5)

    def test_outputs_in_open_unit_interval(self):
        model = DtModel(TINY, seed=2)
        # nudge the head away from zero so outputs move off 0.5
        model.params["head_w"].data += 0.3
        rng = np.random.default_rng(3)
        preds = dt_forward(model, *_random_batch(rng, 3, 4, TINY))
        assert np.all(preds.data > 0) and np.all(preds.data < 1)

    def test_sequence_too_long_rejected(self):
        model = DtModel(TINY, seed=4)
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            dt_forward(model, *_random_batch(rng, 1, TINY.seq_len + 1, TINY))

    def test_padding_invariance(self):
        """Garbage in padded slots must not change real predictions at all."""
        model = DtModel(TINY, seed=6)
        model.params["head_w"].data += 0.25
        rng = np.random.default_rng(7)
        rtg, states, actions = _random_batch(rng, 2, 2, TINY)

        short = dt_forward(model, rtg, states, actions).data

        t_pad = TINY.seq_len
        rtg_p = np.concatenate([rtg, 99.0 * np.ones((2, t_pad - 2, 1))], axis=1)
        states_p = np.concatenate(
            [states, 13.0 * np.ones((2, t_pad - 2, TINY.state_dim))], axis=1
        )
        actions_p = np.concatenate(
            [actions, 0.9 * np.ones((2, t_pad - 2, TINY.action_dim))], axis=1
        )
        pad = np.zeros((2, t_pad), dtype=bool)
        pad[:, :2] = True
        padded = dt_forward(model, rtg_p, states_p, actions_p, pad_mask=pad).data
        np.testing.assert_array_equal(padded[:, :2], short)

    def test_causality_future_permutation(self):
        model = DtModel(TINY, seed=8)
        model.params["head_w"].data += 0.25
        rng = np.random.default_rng(9)
        rtg, states, actions = _random_batch(rng, 1, 5, TINY)
        base = dt_forward(model, rtg, states, actions).data

        # swap the two final timesteps; predictions at steps 0..2 fixed
        perm = [0, 1, 2, 4, 3]
        swapped = dt_forward(model, rtg[:, perm], states[:, perm], actions[:, perm]).data
        np.testing.assert_array_equal(swapped[:, :3], base[:, :3])

    def test_causality_token_perturbation(self):
        model = DtModel(TINY, seed=10)
        model.params["head_w"].data += 0.25
        rng = np.random.default_rng(11)
        rtg, states, actions = _random_batch(rng, 1, 4, TINY)
        base = dt_forward(model, rtg, states, actions).data
        for tau in range(4):
            mutated = actions.copy()
            mutated[0, tau] += 5.0  # a_tau token is after s_tau: no effect at <= tau
            got = dt_forward(model, rtg, states, mutated).data
            np.testing.assert_array_equal(got[0, : tau + 1], base[0, : tau + 1])

    def test_train_mode_needs_rng(self):
        model = DtModel(
            DtConfig(state_dim=4, action_dim=2, embed_dim=16, n_heads=2,
                     n_layers=1, dropout=0.1, seq_len=6), seed=12,
        )
        rng = np.random.default_rng(13)
        with pytest.raises(ValueError):
            dt_forward(model, *_random_batch(rng, 1, 2, TINY), train=True)


class TestFullModelGradient:
    def test_all_params_match_finite_differences(self):
        cfg = DtConfig(
            state_dim=3, action_dim=1, embed_dim=8, n_heads=1, n_layers=1,
            dropout=0.0, seq_len=3,
        )
        model = DtModel(cfg, seed=14)
        # move every zero-initialized tensor off zero so no gradient hides
        rng = np.random.default_rng(15)
        for name in model.param_names:
            t = model.params[name]
            t.data = t.data + 0.05 * rng.standard_normal(t.data.shape)
        rtg, states, actions = _random_batch(rng, 2, 3, cfg)
        target = rng.random((2, 3, 1))

        def loss_value():
            preds = dt_forward(model, rtg, states, actions)
            return mse(preds, target)

        with Tape() as tape:
            loss = loss_value()
            backward(tape, loss)
        h = 1e-4
        for name in model.param_names:
            t = model.params[name]
            an = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_value().data)
                flat[i] = orig - h
                dn = float(loss_value().data)
                flat[i] = orig
                fd[i] = (up - dn) / (2 * h)
            fd = fd.reshape(t.data.shape)
            rel = np.abs(an - fd) / np.maximum(np.abs(fd), 1e-6)
            assert np.max(rel) < 1e-3, f"{name}: max rel err {np.max(rel):.2e}"


class TestTraining:
    def test_memorizes_single_step(self):
        model = DtModel(TINY, seed=16)
        rng = np.random.default_rng(17)
        trajs = _synthetic_trajs(rng, 1, [1], TINY, action=np.array([0.3, 0.7]))
        _, losses = dt_train(model, trajs, seed=18, epochs=500)
        assert losses[-1] < 1e-4

    def test_loss_descends(self):
        model = DtModel(TINY, seed=19)
        rng = np.random.default_rng(20)
        trajs = _synthetic_trajs(rng, 40, [2, 3, 4], TINY)
        _, losses = dt_train(model, trajs, seed=21, epochs=30)
        assert losses[-1] < losses[0]

    def test_seed_determinism(self):
        cfg = DtConfig(
            state_dim=4, action_dim=2, embed_dim=16, n_heads=2, n_layers=1,
            dropout=0.1, seq_len=6, lr=1e-3,
        )
        rng = np.random.default_rng(22)
        trajs = _synthetic_trajs(rng, 12, [2, 3], cfg)
        m1 = DtModel(cfg, seed=23)
        m2 = DtModel(cfg, seed=23)
        _, l1 = dt_train(m1, trajs, seed=24, epochs=5)
        _, l2 = dt_train(m2, trajs, seed=24, epochs=5)
        assert l1 == l2

    def test_zero_epochs_leaves_model_unchanged(self):
        model = DtModel(TINY, seed=25)
        before = [p.data.copy() for p in model.parameters()]
        rng = np.random.default_rng(26)
        trajs = _synthetic_trajs(rng, 3, [2], TINY)
        out, losses = dt_train(model, trajs, seed=27, epochs=0)
        assert out is model and losses == []
        for prev, prm in zip(before, model.parameters()):
            np.testing.assert_array_equal(prev, prm.data)

    def test_empty_set_rejected(self):
        model = DtModel(TINY, seed=28)
        with pytest.raises(ValueError):
            dt_train(model, TrajectorySet(trajectories=(), normalizer=0.0), seed=0)


class TestInference:
    def test_cold_start_in_unit_box(self):
        model = DtModel(TINY, seed=29)
        x = dt_infer(model, [], live_state=np.zeros(TINY.state_dim))
        assert x.shape == (2,)
        assert np.all(x > 0) and np.all(x < 1)

    def test_constant_policy_recovery(self):
        model = DtModel(TINY, seed=30)
        rng = np.random.default_rng(31)
        const = np.array([0.25, 0.65])
        trajs = _synthetic_trajs(rng, 30, [1, 2, 3], TINY, action=const)
        dt_train(model, trajs, seed=32, epochs=150)
        x = dt_infer(model, [], live_state=rng.standard_normal(TINY.state_dim))
        np.testing.assert_allclose(x, const, atol=0.02)

    def test_history_truncated_to_window(self):
        model = DtModel(TINY, seed=33)
        rng = np.random.default_rng(34)
        step = (0.5, rng.standard_normal(TINY.state_dim), rng.random(2))
        hist = [step] * 40  # far beyond seq_len - 1
        x = dt_infer(model, hist, live_state=rng.standard_normal(TINY.state_dim))
        assert x.shape == (2,)


class TestCheckpoint:
    def test_roundtrip_preserves_predictions(self, tmp_path):
        model = DtModel(TINY, seed=35)
        model.params["head_w"].data += 0.2
        rng = np.random.default_rng(36)
        rtg, states, actions = _random_batch(rng, 2, 3, TINY)
        want = dt_forward(model, rtg, states, actions).data
        path = tmp_path / "dt.ckpt"
        save_dt(model, path, ensemble_size=5, dimension=2, normalizer=0.37)
        loaded, meta = load_dt(path)
        got = dt_forward(loaded, rtg, states, actions).data
        np.testing.assert_array_equal(got, want)
        assert meta["ensemble_size"] == 5
        assert meta["dimension"] == 2
        assert meta["normalizer"] == 0.37
