"""Toy decoder-only multi-head-attention model with hand-written gradients.

The model is deliberately plain: token embedding plus fixed sinusoidal
positions, parameter-free layer norm, causal softmax attention with separate
Q/K/V/O projections, a ReLU MLP, and an untied output head. Everything runs
in float64 numpy so training is bitwise reproducible from the seeds, and all
2-D projection weights use the (out_features, in_features) convention so that
attention head h owns rows [h*head_dim, (h+1)*head_dim) of Wq/Wk/Wv.

Gradients are computed by explicit backprop and are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ..errors import InvalidConfigurationError

__all__ = ["ToyModelConfig", "TaskStream", "TinyDecoder", "MUON_PARAM_SUFFIXES"]

TASKS = ("copy", "modular-addition", "char-lm")

# per-layer matrix parameters on the whitened-update path
MUON_PARAM_SUFFIXES = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2")

LN_EPS = 1e-5


@dataclass(frozen=True)
class ToyModelConfig:
    num_layers: int = 2
    d_model: int = 96
    num_heads: int = 12
    head_dim: int = 8
    vocab_size: int = 64
    seq_len: int = 64
    task: str = "copy"
    init_seed: int = 0

    def __post_init__(self):
        if min(
            self.num_layers,
            self.d_model,
            self.num_heads,
            self.head_dim,
            self.vocab_size,
            self.seq_len,
        ) < 1:
            raise InvalidConfigurationError("model dimensions must be positive")
        if self.d_model != self.num_heads * self.head_dim:
            raise InvalidConfigurationError(
                f"d_model {self.d_model} != num_heads*head_dim "
                f"{self.num_heads * self.head_dim}"
            )
        if self.task not in TASKS:
            raise InvalidConfigurationError(
                f"unknown task {self.task!r}; expected one of {TASKS}"
            )
        if self.task == "copy" and (self.seq_len < 4 or self.seq_len % 2 != 0):
            raise InvalidConfigurationError("copy task needs an even seq_len >= 4")


class TaskStream:
    """Deterministic synthetic batch source with a fixed held-out validation slice.

    Three independent substreams are derived from data_seed: training batches,
    the validation set (generated eagerly, fixed size), and task structure
    (the Markov transition table behind char-lm).
    """

    def __init__(
        self,
        config: ToyModelConfig,
        data_seed: int,
        batch_size: int = 16,
        val_batches: int = 4,
    ):
        if batch_size < 1 or val_batches < 1:
            raise InvalidConfigurationError("batch_size and val_batches must be >= 1")
        self.config = config
        self.batch_size = batch_size
        train_ss, val_ss, struct_ss = np.random.SeedSequence([int(data_seed)]).spawn(3)
        self._transition = None
        if config.task == "char-lm":
            struct_rng = np.random.default_rng(struct_ss)
            weights = struct_rng.gamma(0.3, size=(config.vocab_size, config.vocab_size))
            self._transition = weights / weights.sum(axis=1, keepdims=True)
        self._train_rng = np.random.default_rng(train_ss)
        val_rng = np.random.default_rng(val_ss)
        self._val = [self._sample(val_rng) for _ in range(val_batches)]

    def next_train_batch(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._sample(self._train_rng)

    def validation_batches(self) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        return self._val

    def _sample(self, rng) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (tokens, targets, mask); loss is averaged over mask>0 positions."""
        cfg = self.config
        b, v = self.batch_size, cfg.vocab_size
        if cfg.task == "copy":
            half = cfg.seq_len // 2
            prefix = rng.integers(0, v, size=(b, half))
            reps = cfg.seq_len // half + 2
            seq = np.tile(prefix, (1, reps))[:, : cfg.seq_len + 1]
            tokens, targets = seq[:, :-1], seq[:, 1:]
            mask = np.zeros_like(tokens, dtype=np.float64)
            mask[:, half - 1 :] = 1.0  # positions whose next token is a visible repeat
            return tokens, targets, mask
        if cfg.task == "modular-addition":
            a = rng.integers(0, v, size=b)
            c = rng.integers(0, v, size=b)
            tokens = np.stack([a, c], axis=1)
            targets = np.stack([c, (a + c) % v], axis=1)
            mask = np.zeros_like(tokens, dtype=np.float64)
            mask[:, 1] = 1.0
            return tokens, targets, mask
        # char-lm: order-1 Markov chain with a fixed seeded transition table
        seq = np.empty((b, cfg.seq_len + 1), dtype=np.int64)
        seq[:, 0] = rng.integers(0, v, size=b)
        cum = np.cumsum(self._transition, axis=1)
        for t in range(cfg.seq_len):
            u = rng.random(b)
            seq[:, t + 1] = (cum[seq[:, t]] > u[:, None]).argmax(axis=1)
        tokens, targets = seq[:, :-1], seq[:, 1:]
        return tokens, targets, np.ones_like(tokens, dtype=np.float64)


def _sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _layer_norm(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + LN_EPS)
    return (x - mu) / std, std


def _layer_norm_backward(dy: np.ndarray, y: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (
        dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True)
    ) / std


class TinyDecoder:
    """Decoder stack exposing per-matrix losses and gradients for the optimizers."""

    def __init__(self, config: ToyModelConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([int(config.init_seed)]))
        d, v = config.d_model, config.vocab_size
        hidden = 4 * d
        params: Dict[str, np.ndarray] = {}
        params["embed"] = 0.02 * rng.standard_normal((v, d))
        for i in range(config.num_layers):
            for name, shape, fan_in in (
                ("attn.wq", (d, d), d),
                ("attn.wk", (d, d), d),
                ("attn.wv", (d, d), d),
                ("attn.wo", (d, d), d),
                ("mlp.w1", (hidden, d), d),
                ("mlp.w2", (d, hidden), hidden),
            ):
                params[f"layer{i}.{name}"] = rng.standard_normal(shape) / np.sqrt(fan_in)
        params["head"] = 0.02 * rng.standard_normal((v, d))
        self.params = params
        self.positions = _sinusoidal_positions(config.seq_len, d)

    def muon_param_names(self) -> List[str]:
        return [
            f"layer{i}.{suffix}"
            for i in range(self.config.num_layers)
            for suffix in MUON_PARAM_SUFFIXES
        ]

    def adaptive_param_names(self) -> List[str]:
        return ["embed", "head"]

    def loss(self, tokens: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
        loss, _ = self._forward(tokens, targets, mask)
        return loss

    def loss_and_grads(
        self, tokens: np.ndarray, targets: np.ndarray, mask: np.ndarray
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        loss, cache = self._forward(tokens, targets, mask)
        return loss, self._backward(cache)

    # ---- forward / backward ----

    def _forward(self, tokens, targets, mask):
        cfg = self.config
        p = self.params
        bsz, length = tokens.shape
        if length > cfg.seq_len:
            raise InvalidConfigurationError(
                f"sequence length {length} exceeds configured {cfg.seq_len}"
            )
        nh, hd, d = cfg.num_heads, cfg.head_dim, cfg.d_model
        scale = 1.0 / np.sqrt(hd)

        x = p["embed"][tokens] + self.positions[:length][None, :, :]
        layers = []
        for i in range(cfg.num_layers):
            pre = f"layer{i}."
            h, std1 = _layer_norm(x)
            q = (h @ p[pre + "attn.wq"].T).reshape(bsz, length, nh, hd).transpose(0, 2, 1, 3)
            k = (h @ p[pre + "attn.wk"].T).reshape(bsz, length, nh, hd).transpose(0, 2, 1, 3)
            vv = (h @ p[pre + "attn.wv"].T).reshape(bsz, length, nh, hd).transpose(0, 2, 1, 3)
            scores = (q @ k.transpose(0, 1, 3, 2)) * scale
            causal = np.tril(np.ones((length, length), dtype=bool))
            scores = np.where(causal[None, None], scores, -np.inf)
            scores -= scores.max(axis=-1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(axis=-1, keepdims=True)
            ctx = (att @ vv).transpose(0, 2, 1, 3).reshape(bsz, length, d)
            x_mid = x + ctx @ p[pre + "attn.wo"].T
            h2, std2 = _layer_norm(x_mid)
            u = h2 @ p[pre + "mlp.w1"].T
            act = np.maximum(u, 0.0)
            x_out = x_mid + act @ p[pre + "mlp.w2"].T
            layers.append(
                dict(h=h, std1=std1, q=q, k=k, v=vv, att=att, ctx=ctx, x_mid=x_mid,
                     h2=h2, std2=std2, u=u, act=act)
            )
            x = x_out

        xf, stdf = _layer_norm(x)
        logits = xf @ p["head"].T
        logz = logits.max(axis=-1, keepdims=True)
        logz = logz + np.log(np.exp(logits - logz).sum(axis=-1, keepdims=True))
        logp = logits - logz
        total = float(mask.sum())
        if total <= 0:
            raise InvalidConfigurationError("loss mask selects no positions")
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        loss = float(-(picked * mask).sum() / total)

        cache = dict(
            tokens=tokens, targets=targets, mask=mask, total=total, layers=layers,
            xf=xf, stdf=stdf, logp=logp, length=length, bsz=bsz,
        )
        return loss, cache

    def _backward(self, cache) -> Dict[str, np.ndarray]:
        cfg = self.config
        p = self.params
        nh, hd, d = cfg.num_heads, cfg.head_dim, cfg.d_model
        scale = 1.0 / np.sqrt(hd)
        bsz, length = cache["bsz"], cache["length"]
        grads: Dict[str, np.ndarray] = {}

        probs = np.exp(cache["logp"])
        dlogits = probs.copy()
        np.put_along_axis(
            dlogits,
            cache["targets"][..., None],
            np.take_along_axis(dlogits, cache["targets"][..., None], axis=-1) - 1.0,
            axis=-1,
        )
        dlogits *= (cache["mask"] / cache["total"])[..., None]

        flat = lambda t: t.reshape(-1, t.shape[-1])
        grads["head"] = flat(dlogits).T @ flat(cache["xf"])
        dxf = dlogits @ p["head"]
        dx = _layer_norm_backward(dxf, cache["xf"], cache["stdf"])

        for i in reversed(range(cfg.num_layers)):
            pre = f"layer{i}."
            c = cache["layers"][i]
            # MLP block: x_out = x_mid + relu(h2 @ W1^T) @ W2^T
            dm = dx
            grads[pre + "mlp.w2"] = flat(dm).T @ flat(c["act"])
            dact = dm @ p[pre + "mlp.w2"]
            du = dact * (c["u"] > 0)
            grads[pre + "mlp.w1"] = flat(du).T @ flat(c["h2"])
            dh2 = du @ p[pre + "mlp.w1"]
            dx_mid = dx + _layer_norm_backward(dh2, c["h2"], c["std2"])

            # attention block: x_mid = x + (att @ v -> heads merged) @ Wo^T
            dattn_out = dx_mid
            ctx = c["ctx"]
            grads[pre + "attn.wo"] = flat(dattn_out).T @ flat(ctx)
            dctx = (dattn_out @ p[pre + "attn.wo"]).reshape(
                bsz, length, nh, hd
            ).transpose(0, 2, 1, 3)
            att, q, k, v = c["att"], c["q"], c["k"], c["v"]
            datt = dctx @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ dctx
            dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dq = (dscores @ k) * scale
            dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale

            def merge(t):
                return t.transpose(0, 2, 1, 3).reshape(bsz, length, d)

            h = c["h"]
            dh = np.zeros_like(h)
            for name, dt in (("attn.wq", dq), ("attn.wk", dk), ("attn.wv", dv)):
                dflat = merge(dt)
                grads[pre + name] = flat(dflat).T @ flat(h)
                dh += dflat @ p[pre + name]
            dx = dx_mid + _layer_norm_backward(dh, h, c["std1"])

        grads["embed"] = np.zeros_like(p["embed"])
        np.add.at(grads["embed"], cache["tokens"], dx)
        return grads
