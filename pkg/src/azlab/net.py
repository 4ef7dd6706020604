"""Two-headed residual network with hand-written reverse-mode gradients.

The trunk is a dense input layer followed by ``depth`` residual blocks
(Linear -> ReLU -> Linear added back onto the skip path). Two linear heads
produce masked-softmax policy probabilities and a tanh value. Parameters
live in a flat ``{name: ndarray}`` dict of float32 arrays; every array op
preserves the input dtype, so the gradient checker can run the same code
in float64.

Policy masking happens at the logit level: illegal logits are forced to
-inf before the softmax, so illegal probabilities are exactly zero and no
cross-entropy gradient ever flows to them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .games import Game, State

NetParams = dict[str, np.ndarray]


class CheckpointError(Exception):
    """A checkpoint file is corrupt, truncated, or config-incompatible."""


class TrainingDivergedError(Exception):
    """Non-finite gradients or parameters were produced during training."""


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    action_count: int
    width: int = 128
    depth: int = 2
    l2_lambda: float = 1e-4
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


def _he_uniform(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(cfg: NetConfig, dtype=np.float32) -> NetParams:
    """He-uniform weights, zero biases, deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    w = cfg.width
    params: NetParams = {
        "in.w": _he_uniform(rng, cfg.input_dim, (w, cfg.input_dim), dtype),
        "in.b": np.zeros(w, dtype=dtype),
    }
    for i in range(cfg.depth):
        params[f"block{i}.w1"] = _he_uniform(rng, w, (w, w), dtype)
        params[f"block{i}.b1"] = np.zeros(w, dtype=dtype)
        params[f"block{i}.w2"] = _he_uniform(rng, w, (w, w), dtype)
        params[f"block{i}.b2"] = np.zeros(w, dtype=dtype)
    params["policy.w"] = _he_uniform(rng, w, (cfg.action_count, w), dtype)
    params["policy.b"] = np.zeros(cfg.action_count, dtype=dtype)
    params["value.w"] = _he_uniform(rng, w, (w,), dtype)
    params["value.b"] = np.zeros((), dtype=dtype)
    return params


def _trunk_forward(params: NetParams, x: np.ndarray, depth: int, keep_cache: bool):
    """Shared trunk. ``x`` is (B, D); returns (h, cache-or-None)."""
    pre_in = x @ params["in.w"].T + params["in.b"]
    h = np.maximum(pre_in, 0)
    cache = [] if keep_cache else None
    for i in range(depth):
        pre1 = h @ params[f"block{i}.w1"].T + params[f"block{i}.b1"]
        mid = np.maximum(pre1, 0)
        delta = mid @ params[f"block{i}.w2"].T + params[f"block{i}.b2"]
        if keep_cache:
            cache.append((h, pre1, mid))
        h = h + delta
    if keep_cache:
        return h, (pre_in, cache)
    return h, None


def _net_depth(params: NetParams) -> int:
    return sum(1 for name in params if name.endswith(".w1"))


def _masked_policy(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax restricted to legal actions; illegal entries are exactly 0."""
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    exp = np.exp(shifted, where=mask, out=np.zeros_like(logits))
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(params: NetParams, features: np.ndarray, mask: np.ndarray):
    """Evaluate the network.

    ``features`` may be a single flat vector or a (B, D) batch; ``mask``
    must match. Returns ``(policy, value)`` with the same leading shape.
    """
    single = features.ndim == 1
    x = features[None, :] if single else features
    m = mask[None, :] if single else mask
    expected = params["in.w"].shape[1]
    if x.shape[1] != expected:
        raise ValueError(f"feature dim {x.shape[1]} does not match network ({expected})")
    if m.shape != (x.shape[0], params["policy.w"].shape[0]):
        raise ValueError("mask shape does not match (batch, action_count)")
    h, _ = _trunk_forward(params, x, _net_depth(params), keep_cache=False)
    policy = _masked_policy(h @ params["policy.w"].T + params["policy.b"], m)
    value = np.tanh(h @ params["value.w"] + params["value.b"])
    if single:
        return policy[0], float(value[0])
    return policy, value


def loss_and_grads(params: NetParams, features, target_policy, target_z, mask, l2_lambda: float):
    """Mean AlphaZero loss over a batch, plus reverse-mode gradients.

    Loss per example: ``(z - v)^2 - pi . log p``; plus ``l2 * sum(theta^2)``
    once per batch. Returns ``(terms, grads)`` where ``terms`` has the
    individual components and ``grads`` matches the params dict.
    """
    if len(features) == 0:
        raise ValueError("empty batch")
    B = features.shape[0]
    depth = _net_depth(params)
    h, (pre_in, block_cache) = _trunk_forward(params, features, depth, keep_cache=True)

    logits = h @ params["policy.w"].T + params["policy.b"]
    p = _masked_policy(logits, mask)
    v_pre = h @ params["value.w"] + params["value.b"]
    v = np.tanh(v_pre)

    # log p only where the target puts mass (legal entries by construction).
    support = target_policy > 0
    logp = np.log(p, where=support, out=np.zeros_like(p))
    policy_loss = -(target_policy * logp).sum(axis=1).mean()
    value_loss = ((target_z - v) ** 2).mean()
    l2_term = l2_lambda * sum(float((w ** 2).sum()) for w in params.values())

    grads: NetParams = {}

    d_logits = (p - target_policy) / B
    d_vpre = (-2.0 * (target_z - v) * (1.0 - v ** 2)) / B

    grads["policy.w"] = d_logits.T @ h
    grads["policy.b"] = d_logits.sum(axis=0)
    grads["value.w"] = h.T @ d_vpre
    grads["value.b"] = d_vpre.sum()

    dh = d_logits @ params["policy.w"] + d_vpre[:, None] * params["value.w"][None, :]
    for i in range(depth - 1, -1, -1):
        h_in, pre1, mid = block_cache[i]
        d_delta = dh  # skip connection passes dh through unchanged
        grads[f"block{i}.w2"] = d_delta.T @ mid
        grads[f"block{i}.b2"] = d_delta.sum(axis=0)
        d_mid = d_delta @ params[f"block{i}.w2"]
        d_pre1 = d_mid * (pre1 > 0)
        grads[f"block{i}.w1"] = d_pre1.T @ h_in
        grads[f"block{i}.b1"] = d_pre1.sum(axis=0)
        dh = dh + d_pre1 @ params[f"block{i}.w1"]
    d_prein = dh * (pre_in > 0)
    grads["in.w"] = d_prein.T @ features
    grads["in.b"] = d_prein.sum(axis=0)

    if l2_lambda:
        two_lambda = 2.0 * l2_lambda
        for name, w in params.items():
            grads[name] = grads[name] + two_lambda * w

    terms = {
        "loss": float(policy_loss + value_loss + l2_term),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "l2": l2_term,
    }
    return terms, grads


class SgdMomentum:
    """Classic SGD with momentum: v <- mu*v + g; theta <- theta - lr*v."""

    def __init__(self, cfg: NetConfig):
        self.learning_rate = cfg.learning_rate
        self.momentum = cfg.momentum
        self.velocity: Optional[NetParams] = None

    def step(self, params: NetParams, grads: NetParams) -> NetParams:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = {n for n, a in grads.items() if not np.all(np.isfinite(a))}
                raise TrainingDivergedError(
                    f"non-finite gradient in {sorted(bad)}; "
                    f"max |param|: { {n: float(np.abs(a).max()) for n, a in params.items()} }"
                )
        if self.velocity is None:
            self.velocity = {n: np.zeros_like(p) for n, p in params.items()}
        lr = params["in.w"].dtype.type(self.learning_rate)
        mu = params["in.w"].dtype.type(self.momentum)
        for name in params:
            v = self.velocity[name]
            v *= mu
            v += grads[name]
            params[name] -= lr * v
        return params


CHECKPOINT_MAGIC = b"AZCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: NetParams, cfg: NetConfig) -> None:
    """Write a versioned checkpoint: magic, JSON header, raw <f4 arrays.

    Header fields: version, the full :class:`NetConfig`, and an array
    manifest (name, shape) in serialization order. Arrays are stored as
    little-endian float32, matching the in-memory dtype bit-for-bit.
    """
    manifest = [(name, list(params[name].shape)) for name in sorted(params)]
    header = json.dumps({"config": asdict(cfg), "arrays": manifest}).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for name, _ in manifest:
            arr = params[name]
            if arr.dtype != np.float32:
                raise CheckpointError(f"checkpoint arrays must be float32, got {arr.dtype}")
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, expected_cfg: Optional[NetConfig] = None):
    """Read a checkpoint; returns ``(params, cfg)``.

    Raises :class:`CheckpointError` on corruption or when ``expected_cfg``
    does not match the stored config.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 10 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[10 : 10 + header_len].decode())
        cfg = NetConfig(**header["config"])
        manifest = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({exc})") from None
    if expected_cfg is not None and cfg != expected_cfg:
        raise CheckpointError(
            f"{path}: checkpoint config {cfg} does not match expected {expected_cfg}"
        )
    params: NetParams = {}
    pos = 10 + header_len
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f4").reshape(shape)
        params[name] = arr.copy() if shape else arr.copy().reshape(())
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    return params, cfg


class NetEvaluator:
    """Bundles a game and parameters behind the evaluator interface MCTS uses.

    ``evaluate(state)`` returns masked priors over actions plus the
    mover-perspective value. The params reference is read-only here, so one
    evaluator can be shared by any number of concurrent searches.
    """

    def __init__(self, game: Game, params: NetParams):
        self.game = game
        self.params = params

    def evaluate(self, state: State):
        mask = self.game.legal_actions(state)
        policy, value = forward(self.params, self.game.encode(state), mask)
        return policy, value

    def value_of(self, state: State) -> float:
        """Value head only (terminal states still go through the network)."""
        mask = np.ones(self.game.action_count, dtype=bool)
        _, value = forward(self.params, self.game.encode(state), mask)
        return value

    def value_many(self, states) -> np.ndarray:
        feats = self.game.encode_many(states)
        masks = np.ones((len(states), self.game.action_count), dtype=bool)
        _, values = forward(self.params, feats, masks)
        return values


def net_config_for(game: Game, **overrides) -> NetConfig:
    """The per-game architecture defaults: width 128; depth 2 for the 3x3
    game and 4 for the larger boards."""
    depth = 2 if game.name == "ttt3" else 4
    base = dict(
        input_dim=game.input_dim,
        action_count=game.action_count,
        width=128,
        depth=depth,
    )
    base.update(overrides)
    return NetConfig(**base)
