"""Linear attention with a learnable row-softmax feature map, and sub-adjacent contribution.

Shapes follow the ``(..., rows, features)`` convention: the second-to-last axis is
time inside a window, the last axis is the per-head feature dimension. Attention
matrices are ``(..., win, win)`` with ``a[j, i]`` the weight query ``j`` puts on key
``i``; column ``i`` therefore measures how much point ``i`` feeds the others.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError
from .numcore import Tensor

KINDS = (
    "learnable_row_softmax",
    "column_softmax",
    "power",
    "relu",
    "elu_plus_one",
    "vanilla_self_attention",
)

TAU_FLOOR = 1e-3

# counts calls into sacon(); training instrumentation reads it
SACON_CALLS = 0


@dataclass(frozen=True)
class SubAdjacentSpan:
    k1: int = 20
    k2: int = 30
    win_size: int = 100

    def __post_init__(self):
        if not (0 <= self.k1 <= self.k2 < self.win_size):
            raise ConfigError(
                f"need 0 <= k1 <= k2 < win_size, got k1={self.k1}, k2={self.k2}, "
                f"win_size={self.win_size}")

    def offsets(self) -> list[int]:
        """Signed offsets j - i inside the span; offset 0 appears at most once."""
        pos = range(self.k1, self.k2 + 1)
        return sorted({d for d in pos} | {-d for d in pos})


@dataclass(frozen=True)
class MappingConfig:
    kind: str = "learnable_row_softmax"
    clamp_value: float = -100.0
    tau_init: float = 1.0
    normalize_rows: bool = False
    power: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown mapping kind {self.kind!r}; expected one of {KINDS}")
        if not self.clamp_value < 0:
            raise ConfigError(f"clamp_value must be negative, got {self.clamp_value}")
        if not self.tau_init > 0:
            raise ConfigError(f"tau_init must be positive, got {self.tau_init}")

    @property
    def is_linear(self) -> bool:
        return self.kind != "vanilla_self_attention"


def map_phi(x, cfg: MappingConfig, tau=None) -> Tensor:
    """Apply the feature map row-wise to ``x`` of shape (..., rows, d).

    ``tau`` is only used by the learnable map; it must broadcast against ``x``
    (one scalar per head is ``(H, 1, 1)``). Defaults to ``cfg.tau_init``.
    """
    x = nc.as_tensor(x)
    kind = cfg.kind
    if kind == "learnable_row_softmax":
        if tau is None:
            tau = cfg.tau_init
        # clamp before dividing so the sentinel's strength does not depend on tau
        return nc.softmax(nc.clamp_negative(x, cfg.clamp_value) / tau, axis=-1)
    if kind == "column_softmax":
        return nc.softmax(x, axis=-2)
    if kind == "power":
        r = nc.relu(x)
        rp = r ** cfg.power
        norm_r = nc.sqrt((r * r).sum(axis=-1, keepdims=True) + 1e-12)
        norm_rp = nc.sqrt((rp * rp).sum(axis=-1, keepdims=True) + 1e-12)
        return rp * (norm_r / norm_rp)
    if kind == "relu":
        return nc.relu(x)
    if kind == "elu_plus_one":
        return nc.elu(x) + 1.0
    raise ConfigError(f"mapping kind {kind!r} has no feature map")


def linear_attention(q, k, v, cfg: MappingConfig, tau=None):
    """Return ``(out, a)`` with ``a = phi(q) phi(k)^T`` and ``out = a v``.

    No row renormalisation unless ``cfg.normalize_rows``. For the vanilla kind,
    ``a`` is the usual scaled-dot-product softmax instead.
    """
    q, k, v = nc.as_tensor(q), nc.as_tensor(k), nc.as_tensor(v)
    if q.shape[-2] != k.shape[-2] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"q, k, v disagree on window length: {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"q and k disagree on feature size: {q.shape}, {k.shape}")

    if cfg.kind == "vanilla_self_attention":
        scores = nc.matmul(q, k.T) * (1.0 / np.sqrt(q.shape[-1]))
        a = nc.softmax(scores, axis=-1)
    else:
        a = nc.matmul(map_phi(q, cfg, tau), map_phi(k, cfg, tau).T)
        if cfg.normalize_rows:
            a = a / (a.sum(axis=-1, keepdims=True) + 1e-12)
    return nc.matmul(a, v), a


@lru_cache(maxsize=64)
def _mask(k1: int, k2: int, win_size: int, wrap: bool) -> np.ndarray:
    span = SubAdjacentSpan(k1, k2, win_size)
    m = np.zeros((win_size, win_size))
    cols = np.arange(win_size)
    for s in span.offsets():
        rows = cols + s
        if wrap:
            np.add.at(m, (rows % win_size, cols), 1.0)
        else:
            ok = (rows >= 0) & (rows < win_size)
            m[rows[ok], cols[ok]] += 1.0
    m.flags.writeable = False
    return m


def stripe_mask(span: SubAdjacentSpan, wrap: bool = True) -> np.ndarray:
    """Cell multiplicities summed into each column's contribution.

    With ``wrap`` row indices outside the window are folded back by one window
    length, so every column sees the same number of cells.
    """
    return _mask(span.k1, span.k2, span.win_size, wrap)


def _check_square(a: Tensor, span: SubAdjacentSpan):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"attention matrix must be square, got {a.shape}")
    if a.shape[-1] != span.win_size:
        raise DimensionError(f"attention side {a.shape[-1]} != span win_size {span.win_size}")


def sacon(a, span: SubAdjacentSpan) -> Tensor:
    """Per-column sum of attention over the wrapped sub-adjacent stripes."""
    global SACON_CALLS
    SACON_CALLS += 1
    a = nc.as_tensor(a)
    _check_square(a, span)
    return (a * stripe_mask(span, wrap=True)).sum(axis=-2)


def sacon_unwrapped(a, span: SubAdjacentSpan) -> Tensor:
    """Same stripes without wrapping; edge columns see fewer cells."""
    a = nc.as_tensor(a)
    _check_square(a, span)
    return (a * stripe_mask(span, wrap=False)).sum(axis=-2)


def sacon_via_roll(q, k, span: SubAdjacentSpan, cfg: MappingConfig, tau=None) -> Tensor:
    """Sub-adjacent contribution from cyclically shifted queries, never forming ``a``.

    Used as an independent check on :func:`sacon`.
    """
    if not cfg.is_linear:
        raise ConfigError("the shifted-query form needs a linear feature map")
    q, k = nc.as_tensor(q), nc.as_tensor(k)
    if q.shape != k.shape:
        raise DimensionError(f"q and k must share a shape, got {q.shape}, {k.shape}")
    if q.shape[-2] != span.win_size:
        raise DimensionError(f"window length {q.shape[-2]} != span win_size {span.win_size}")
    pq, pk = map_phi(q, cfg, tau), map_phi(k, cfg, tau)
    if cfg.normalize_rows:
        row_sums = (pq * pk.sum(axis=-2, keepdims=True)).sum(axis=-1, keepdims=True)
        pq = pq / (row_sums + 1e-12)
    total = None
    for s in span.offsets():
        term = (nc.roll(pq, -s, axis=-2) * pk).sum(axis=-1)
        total = term if total is None else total + term
    return total
