"""Pre-norm encoder that reconstructs each window through linear attention.

Layout per layer: ``h += Wo·attn(LN1(h))`` then ``h += FFN(LN2(h))``; a final
layer norm feeds the linear reconstruction head. The input embedding is one
linear projection plus a fixed sinusoidal position table.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .attention import MappingConfig, SubAdjacentSpan, linear_attention, sacon
from .errors import ConfigError, DimensionError, InputError
from .numcore import Tensor

CHECKPOINT_FORMAT = "subadjacent-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 1
    win_size: int = 100
    d_model: int = 512
    n_layers: int = 3
    n_heads: int = 8
    d_ff: int | None = None
    span: SubAdjacentSpan = field(default_factory=SubAdjacentSpan)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        for name in ("n_channels", "win_size", "d_model", "n_layers", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.span.win_size != self.win_size:
            raise ConfigError(f"span.win_size={self.span.win_size} != win_size={self.win_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["span"] = SubAdjacentSpan(**d.get("span", {}))
        d["mapping"] = MappingConfig(**d.get("mapping", {}))
        return cls(**d)


def positional_table(win_size: int, d_model: int) -> np.ndarray:
    pos = np.arange(win_size)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-np.log(10000.0) / d_model))
    table = np.zeros((win_size, d_model))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: d_model // 2])
    return table


@dataclass
class ModelParams:
    """Trainable tensors by name, plus the fixed position table."""

    weights: dict
    pos: np.ndarray

    def __getitem__(self, name) -> Tensor:
        return self.weights[name]

    def __iter__(self):
        return iter(self.weights)

    def items(self):
        return self.weights.items()

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(t.data.copy(), requires_grad=True, name=k)
                            for k, t in self.weights.items()}, self.pos.copy())

    def arrays(self) -> dict:
        return {k: t.data for k, t in self.weights.items()}

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.weights.values()))


def _shapes(cfg: ModelConfig) -> dict:
    d, D, f, H = cfg.d_model, cfg.n_channels, cfg.d_ff, cfg.n_heads
    shapes = {"embed.w": (D, d), "embed.b": (d,)}
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        shapes.update({
            p + "norm1.g": (d,), p + "norm1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d), p + "attn.bk": (d,),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "attn.tau": (H,),
            p + "norm2.g": (d,), p + "norm2.b": (d,),
            p + "ffn.w1": (d, f), p + "ffn.b1": (f,),
            p + "ffn.w2": (f, d), p + "ffn.b2": (d,),
        })
    shapes.update({"norm_f.g": (d,), "norm_f.b": (d,), "head.w": (d, D), "head.b": (D,)})
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Xavier-uniform matrices, zero biases, unit norm gains, tau at ``tau_init``."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in _shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, size=shape)
        elif leaf == "tau":
            data = np.full(shape, cfg.mapping.tau_init)
        elif leaf == "g":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        weights[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(weights, positional_table(cfg.win_size, cfg.d_model))


@dataclass
class AttentionState:
    """Per-layer attention matrices ``(B, H, W, W)`` and contributions ``(B, H, W)``."""

    a: list
    sacon: list

    def mean_sacon(self) -> Tensor | None:
        """Contribution averaged over layers and heads, shape ``(B, W)``."""
        if not self.sacon:
            return None
        total = self.sacon[0].mean(axis=1)
        for s in self.sacon[1:]:
            total = total + s.mean(axis=1)
        return total * (1.0 / len(self.sacon))


def _dropout(t: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0.0 or rng is None:
        return t
    keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
    return t * keep


def forward(x, params: ModelParams, cfg: ModelConfig, *, need_sacon: bool = True, rng=None):
    """Reconstruct ``x`` of shape ``(W, D)`` or ``(B, W, D)``.

    Returns ``(x_hat, state)``. ``rng`` enables dropout; pass None at inference.
    With ``need_sacon=False`` the contribution vectors are never computed.
    """
    x = nc.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[1:] != (cfg.win_size, cfg.n_channels):
        raise DimensionError(
            f"expected window shape ({cfg.win_size}, {cfg.n_channels}), got {x.shape}")
    B, W, H, dh, d = x.shape[0], cfg.win_size, cfg.n_heads, cfg.d_head, cfg.d_model
    P = params.weights

    h = nc.matmul(x, P["embed.w"]) + P["embed.b"] + params.pos
    attn_mats, sacons = [], []
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        z = nc.layer_norm(h, P[p + "norm1.g"], P[p + "norm1.b"])

        def heads(w, b):
            return (nc.matmul(z, P[p + w]) + P[p + b]).reshape(B, W, H, dh).transpose(0, 2, 1, 3)

        q, k, v = heads("attn.wq", "attn.bq"), heads("attn.wk", "attn.bk"), heads("attn.wv", "attn.bv")
        tau = P[p + "attn.tau"].reshape(H, 1, 1)
        out, a = linear_attention(q, k, v, cfg.mapping, tau)
        attn_mats.append(a)
        if need_sacon:
            sacons.append(sacon(a, cfg.span))
        out = out.transpose(0, 2, 1, 3).reshape(B, W, d)
        h = h + _dropout(nc.matmul(out, P[p + "attn.wo"]) + P[p + "attn.bo"], cfg.dropout, rng)

        z = nc.layer_norm(h, P[p + "norm2.g"], P[p + "norm2.b"])
        ff = nc.matmul(nc.relu(nc.matmul(z, P[p + "ffn.w1"]) + P[p + "ffn.b1"]), P[p + "ffn.w2"])
        h = h + _dropout(ff + P[p + "ffn.b2"], cfg.dropout, rng)

    x_hat = nc.matmul(nc.layer_norm(h, P["norm_f.g"], P["norm_f.b"]), P["head.w"]) + P["head.b"]
    state = AttentionState(attn_mats, sacons)
    if squeeze:
        x_hat = x_hat.reshape(W, cfg.n_channels)
    return x_hat, state


def floor_tau(params: ModelParams, floor: float):
    for name, t in params.items():
        if name.endswith("attn.tau"):
            np.maximum(t.data, floor, out=t.data)


# -- checkpoint container --------------------------------------------------------------
# A zip archive readable by numpy.load: one .npy member per named array and a
# "__meta__.npy" holding a JSON string (format tag, model config, extra fields).
# Member timestamps are pinned so identical parameters give identical bytes.

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _write_member(zf: zipfile.ZipFile, name: str, array: np.ndarray):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(array, order="C"), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, buf.getvalue())


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, extra: dict | None = None):
    meta = {"format": CHECKPOINT_FORMAT, "model": cfg.to_dict(), "extra": extra or {}}
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "__meta__", np.array(json.dumps(meta, sort_keys=True)))
        for name in sorted(params.weights):
            _write_member(zf, name, params.weights[name].data)


def load_checkpoint(path):
    """Return ``(params, cfg, extra)``."""
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise InputError(f"{path}: not a checkpoint (no __meta__ member)")
        meta = json.loads(z["__meta__"].item())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise InputError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        cfg = ModelConfig.from_dict(meta["model"])
        expected = _shapes(cfg)
        weights = {}
        for name, shape in expected.items():
            if name not in z.files:
                raise InputError(f"{path}: missing array {name}")
            arr = z[name]
            if arr.shape != shape:
                raise InputError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
            weights[name] = Tensor(arr, requires_grad=True, name=name)
    return ModelParams(weights, positional_table(cfg.win_size, cfg.d_model)), cfg, meta["extra"]
