"""Return-conditioned causal transformer over (rtg, state, action) tokens.

Each timestep contributes three tokens in the order (R, s, a); the action
prediction for a step is read from its *state* token, so the model sees the
target return and everything before, but never its own action. Pre-norm
blocks, learned timestep embeddings shared across the three token streams,
and a zero-initialized sigmoid head (an untrained model predicts 0.5 per
coordinate, the center of the unit box).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from dro import nn
from dro.nn import AdamState, Tape, Tensor
from dro.trajectory import TrajectorySet


@dataclass(frozen=True)
class DtConfig:
    state_dim: int
    action_dim: int
    embed_dim: int = 128
    n_heads: int = 4
    n_layers: int = 4
    dropout: float = 0.1
    seq_len: int = 20  # timesteps; the token sequence is 3x this
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 100

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be >= 1")


def _param_names(cfg: DtConfig) -> list[str]:
    names = ["rtg_w", "rtg_b", "state_w", "state_b", "action_w", "action_b", "pos"]
    for i in range(cfg.n_layers):
        names += [
            f"b{i}.ln1_w", f"b{i}.ln1_b",
            f"b{i}.wq", f"b{i}.bq", f"b{i}.wk", f"b{i}.bk",
            f"b{i}.wv", f"b{i}.bv", f"b{i}.wo", f"b{i}.bo",
            f"b{i}.ln2_w", f"b{i}.ln2_b",
            f"b{i}.ff1_w", f"b{i}.ff1_b", f"b{i}.ff2_w", f"b{i}.ff2_b",
        ]
    names += ["lnf_w", "lnf_b", "head_w", "head_b"]
    return names


class DtModel:
    """Parameters plus persistent Adam moments (fine-tuned across iterations)."""

    def __init__(self, cfg: DtConfig, seed: int):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        e, s, d = cfg.embed_dim, cfg.state_dim, cfg.action_dim

        def w(*shape):
            return Tensor(0.02 * rng.standard_normal(shape))

        p: dict[str, Tensor] = {
            "rtg_w": w(1, e), "rtg_b": Tensor(np.zeros(e)),
            "state_w": w(s, e), "state_b": Tensor(np.zeros(e)),
            "action_w": w(d, e), "action_b": Tensor(np.zeros(e)),
            "pos": w(cfg.seq_len, e),
        }
        for i in range(cfg.n_layers):
            p[f"b{i}.ln1_w"] = Tensor(np.ones(e))
            p[f"b{i}.ln1_b"] = Tensor(np.zeros(e))
            for nm in ("wq", "wk", "wv", "wo"):
                p[f"b{i}.{nm}"] = w(e, e)
            for nm in ("bq", "bk", "bv", "bo"):
                p[f"b{i}.{nm}"] = Tensor(np.zeros(e))
            p[f"b{i}.ln2_w"] = Tensor(np.ones(e))
            p[f"b{i}.ln2_b"] = Tensor(np.zeros(e))
            p[f"b{i}.ff1_w"] = w(e, 4 * e)
            p[f"b{i}.ff1_b"] = Tensor(np.zeros(4 * e))
            p[f"b{i}.ff2_w"] = w(4 * e, e)
            p[f"b{i}.ff2_b"] = Tensor(np.zeros(e))
        p["lnf_w"] = Tensor(np.ones(e))
        p["lnf_b"] = Tensor(np.zeros(e))
        p["head_w"] = Tensor(np.zeros((e, d)))  # zero init: cold start at 0.5
        p["head_b"] = Tensor(np.zeros(d))
        self.params = p
        self.param_names = _param_names(cfg)
        self.adam = AdamState(self.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in self.param_names]


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return nn.add(nn.matmul(x, w), b)


def _attention_mask(pad_mask: np.ndarray, t: int) -> np.ndarray:
    """(B, 1, 3T, 3T) boolean: causal and never attending to padded keys."""
    tokens = 3 * t
    causal = np.tril(np.ones((tokens, tokens), dtype=bool))
    key_real = np.repeat(pad_mask, 3, axis=1)  # (B, 3T)
    return causal[np.newaxis, np.newaxis] & key_real[:, np.newaxis, np.newaxis, :]


def dt_forward(
    model: DtModel,
    rtg: np.ndarray,
    states: np.ndarray,
    actions: np.ndarray,
    pad_mask: np.ndarray | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Predicted actions (B, T, action_dim), each coordinate in (0, 1).

    Inputs are (B, T, 1) / (B, T, state_dim) / (B, T, action_dim) with
    T <= cfg.seq_len; ``pad_mask`` marks real timesteps (True) in
    right-padded batches. Eval mode (train=False) is deterministic.
    """
    cfg = model.cfg
    b, t = states.shape[0], states.shape[1]
    if t > cfg.seq_len:
        raise ValueError(f"sequence length {t} exceeds the maximum {cfg.seq_len}")
    if train and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    if pad_mask is None:
        pad_mask = np.ones((b, t), dtype=bool)
    p = model.params

    r_tok = _linear(Tensor(rtg), p["rtg_w"], p["rtg_b"])
    s_tok = _linear(Tensor(states), p["state_w"], p["state_b"])
    a_tok = _linear(Tensor(actions), p["action_w"], p["action_b"])
    pos = nn.embed(p["pos"], np.arange(t))
    r_tok, s_tok, a_tok = (nn.add(tok, pos) for tok in (r_tok, s_tok, a_tok))

    x = nn.interleave3(r_tok, s_tok, a_tok)  # (B, 3T, E)
    x = nn.dropout(x, cfg.dropout, rng, train)
    allowed = _attention_mask(pad_mask, t)
    head_dim = cfg.embed_dim // cfg.n_heads

    for i in range(cfg.n_layers):
        h = nn.layernorm(x, p[f"b{i}.ln1_w"], p[f"b{i}.ln1_b"])
        q = _split_heads(_linear(h, p[f"b{i}.wq"], p[f"b{i}.bq"]), cfg.n_heads)
        k = _split_heads(_linear(h, p[f"b{i}.wk"], p[f"b{i}.bk"]), cfg.n_heads)
        v = _split_heads(_linear(h, p[f"b{i}.wv"], p[f"b{i}.bv"]), cfg.n_heads)
        scores = nn.scale(nn.matmul(q, nn.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
        weights = nn.softmax(nn.causal_mask(scores, allowed))
        weights = nn.dropout(weights, cfg.dropout, rng, train)
        ctx = _merge_heads(nn.matmul(weights, v))
        attn_out = nn.dropout(
            _linear(ctx, p[f"b{i}.wo"], p[f"b{i}.bo"]), cfg.dropout, rng, train
        )
        x = nn.add(x, attn_out)
        h2 = nn.layernorm(x, p[f"b{i}.ln2_w"], p[f"b{i}.ln2_b"])
        ff = _linear(nn.gelu(_linear(h2, p[f"b{i}.ff1_w"], p[f"b{i}.ff1_b"])),
                     p[f"b{i}.ff2_w"], p[f"b{i}.ff2_b"])
        x = nn.add(x, nn.dropout(ff, cfg.dropout, rng, train))

    h = nn.layernorm(x, p["lnf_w"], p["lnf_b"])
    s_positions = nn.take_every3(h, 1)  # predictions read from the state tokens
    return nn.sigmoid(_linear(s_positions, p["head_w"], p["head_b"]))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, tokens, e = x.data.shape
    return nn.transpose(nn.reshape(x, (b, tokens, n_heads, e // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, tokens, hd = x.data.shape
    return nn.reshape(nn.transpose(x, (0, 2, 1, 3)), (b, tokens, h * hd))


def _batch_arrays(trajectories, seq_len: int, state_dim: int, action_dim: int):
    """Right-pad a list of trajectories to the longest length present."""
    t_max = max(len(traj) for traj in trajectories)
    if t_max > seq_len:
        raise ValueError(f"trajectory length {t_max} exceeds seq_len {seq_len}")
    b = len(trajectories)
    rtg = np.zeros((b, t_max, 1))
    states = np.zeros((b, t_max, state_dim))
    actions = np.zeros((b, t_max, action_dim))
    pad = np.zeros((b, t_max), dtype=bool)
    for i, traj in enumerate(trajectories):
        for j, step in enumerate(traj):
            rtg[i, j, 0] = step.rtg
            states[i, j] = step.state
            actions[i, j] = step.action
            pad[i, j] = True
    return rtg, states, actions, pad


def dt_train(
    model: DtModel,
    trajectories: TrajectorySet,
    seed: int,
    epochs: int | None = None,
    batch_size: int | None = None,
) -> tuple[DtModel, list[float]]:
    """MSE regression of recorded actions over non-padded steps.

    Shuffled minibatches per epoch; updates the passed-in model in place
    (warm start) and returns it with the per-epoch loss curve.
    """
    if len(trajectories) == 0:
        raise ValueError("cannot train on an empty trajectory set")
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    rng = np.random.default_rng(seed)
    params = model.parameters()
    trajs = trajectories.trajectories
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(trajs))
        epoch_losses = []
        for start in range(0, len(trajs), batch_size):
            batch = [trajs[i] for i in order[start : start + batch_size]]
            rtg, states, actions, pad = _batch_arrays(
                batch, cfg.seq_len, cfg.state_dim, cfg.action_dim
            )
            for prm in params:
                prm.zero_grad()
            with Tape() as tape:
                preds = dt_forward(
                    model, rtg, states, actions, pad_mask=pad, train=True, rng=rng
                )
                loss = nn.mse(preds, actions, mask=pad[:, :, np.newaxis])
                nn.backward(tape, loss)
            grads = [
                prm.grad if prm.grad is not None else np.zeros_like(prm.data)
                for prm in params
            ]
            nn.adam_step(params, grads, model.adam)
            epoch_losses.append(float(loss.data))
        losses.append(float(np.mean(epoch_losses)))
    return model, losses


def dt_infer(
    model: DtModel,
    history: list[tuple[float, np.ndarray, np.ndarray]],
    live_state: np.ndarray,
    target_rtg: float = 1.0,
) -> np.ndarray:
    """Next-query proposal in (0, 1)^d given real history and a target return.

    ``history`` holds (rtg, state, action) per past real step; only the most
    recent seq_len - 1 entries are kept. A pseudo-step with the live state
    and the target return is appended, and the prediction at its state token
    is returned (eval mode, deterministic).
    """
    cfg = model.cfg
    kept = history[-(cfg.seq_len - 1):] if cfg.seq_len > 1 else []
    t = len(kept) + 1
    rtg = np.zeros((1, t, 1))
    states = np.zeros((1, t, cfg.state_dim))
    actions = np.zeros((1, t, cfg.action_dim))
    for j, (r, s, a) in enumerate(kept):
        rtg[0, j, 0] = r
        states[0, j] = s
        actions[0, j] = a
    rtg[0, -1, 0] = target_rtg
    states[0, -1] = live_state
    preds = dt_forward(model, rtg, states, actions, train=False)
    return preds.data[0, -1].copy()


# ---------------------------------------------------------------------------
# Checkpointing: binary parameters + structured-text sidecar
# ---------------------------------------------------------------------------


def save_dt(model: DtModel, path, ensemble_size: int, dimension: int, normalizer: float) -> None:
    nn.save_checkpoint(path, [p.data for p in model.parameters()])
    sidecar = {
        "config": asdict(model.cfg),
        "ensemble_size": ensemble_size,
        "dimension": dimension,
        "normalizer": normalizer,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_dt(path) -> tuple[DtModel, dict]:
    with open(str(path) + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    cfg = DtConfig(**sidecar["config"])
    model = DtModel(cfg, seed=0)
    arrays = nn.load_checkpoint(path)
    if len(arrays) != len(model.param_names):
        raise ValueError("checkpoint tensor count does not match the architecture")
    for name, arr in zip(model.param_names, arrays):
        if model.params[name].data.shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        model.params[name].data = arr
    return model, sidecar
