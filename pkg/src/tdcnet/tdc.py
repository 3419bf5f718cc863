"""Temporal dynamic convolution: multi-width 1-d convolutions fused by
input-dependent channel and time coefficients.

Given an (L, N) score sequence the block runs one "same" convolution per
kernel width, reduces their concatenation back to L channels with a width-1
convolution, derives a row-stochastic channel coefficient matrix (L, J) and a
stochastic time coefficient row (1, N) from the reduction, and pools the
coefficient-weighted mixture into a single (1, L) vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError


def _default_hidden_n(clips):
    return max(4, clips // 2)


def _default_hidden_l(channels):
    return max(8, channels // 8)


@dataclass
class TdcConfig:
    """Shape parameters of one dynamic convolution block."""

    channels: int
    clips: int
    kernel_widths: tuple = (1, 3, 5)
    hidden_n: int = 0  # 0 selects the default max(4, clips // 2)
    hidden_l: int = 0  # 0 selects the default max(8, channels // 8)

    def __post_init__(self):
        self.kernel_widths = tuple(int(w) for w in self.kernel_widths)
        if self.channels < 1 or self.clips < 1:
            raise ConfigurationError(
                f"channels and clips must be positive, got {self.channels}, {self.clips}")
        if not self.kernel_widths:
            raise ConfigurationError("kernel_widths must be non-empty")
        if any(w % 2 == 0 or w < 1 for w in self.kernel_widths):
            raise ConfigurationError(f"kernel widths must be odd and positive: {self.kernel_widths}")
        if list(self.kernel_widths) != sorted(set(self.kernel_widths)):
            raise ConfigurationError(f"kernel widths must be strictly increasing: {self.kernel_widths}")
        if not self.hidden_n:
            self.hidden_n = _default_hidden_n(self.clips)
        if not self.hidden_l:
            self.hidden_l = _default_hidden_l(self.channels)
        if self.hidden_n < 1 or self.hidden_l < 1:
            raise ConfigurationError("coefficient head widths must be >= 1")

    @property
    def num_widths(self):
        return len(self.kernel_widths)


def uniform_init(rng, shape, fan_in):
    """Weights uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class TdcParameters:
    """All learnable weights of one block."""

    config: TdcConfig
    conv_w: list = field(default_factory=list)  # per width: (L, L, width)
    conv_b: list = field(default_factory=list)  # per width: (L,)
    reduce_w: Tensor = None                     # (L, J*L, 1)
    reduce_b: Tensor = None                     # (L,)
    w_k1: Tensor = None                         # (N, n)
    w_k2: Tensor = None                         # (n, J)
    w_t1: Tensor = None                         # (l, L)
    w_t2: Tensor = None                         # (1, l)

    @classmethod
    def init(cls, config: TdcConfig, rng) -> "TdcParameters":
        L, N, J = config.channels, config.clips, config.num_widths
        p = cls(config=config)
        for w in config.kernel_widths:
            p.conv_w.append(uniform_init(rng, (L, L, w), fan_in=L * w))
            p.conv_b.append(uniform_init(rng, (L,), fan_in=L * w))
        p.reduce_w = uniform_init(rng, (L, J * L, 1), fan_in=J * L)
        p.reduce_b = uniform_init(rng, (L,), fan_in=J * L)
        p.w_k1 = uniform_init(rng, (N, config.hidden_n), fan_in=N)
        p.w_k2 = uniform_init(rng, (config.hidden_n, J), fan_in=config.hidden_n)
        p.w_t1 = uniform_init(rng, (config.hidden_l, L), fan_in=L)
        p.w_t2 = uniform_init(rng, (1, config.hidden_l), fan_in=config.hidden_l)
        return p

    def named_tensors(self, prefix=""):
        for j, w in enumerate(self.config.kernel_widths):
            yield f"{prefix}conv{w}.w", self.conv_w[j]
            yield f"{prefix}conv{w}.b", self.conv_b[j]
        yield f"{prefix}reduce.w", self.reduce_w
        yield f"{prefix}reduce.b", self.reduce_b
        yield f"{prefix}w_k1", self.w_k1
        yield f"{prefix}w_k2", self.w_k2
        yield f"{prefix}w_t1", self.w_t1
        yield f"{prefix}w_t2", self.w_t2


def multi_scale_conv(x: Tensor, params: TdcParameters):
    """Run one same-length convolution per configured width; J tensors (L, N)."""
    cfg = params.config
    if x.shape != (cfg.channels, cfg.clips):
        raise DimensionError(
            f"input shape {x.shape} does not match config ({cfg.channels}, {cfg.clips})")
    return [ad.conv1d_same(x, w, b) for w, b in zip(params.conv_w, params.conv_b)]


def reduce_concat_conv(conv_results, params: TdcParameters) -> Tensor:
    """Width-1 convolution mapping the stacked J*L channels back to L."""
    cfg = params.config
    if len(conv_results) != cfg.num_widths:
        raise ConfigurationError(
            f"got {len(conv_results)} conv results for {cfg.num_widths} widths")
    stacked = ad.concat_axis(conv_results, axis=0)
    return ad.conv1d_same(stacked, params.reduce_w, params.reduce_b)


def channel_coefficients(xprime: Tensor, params: TdcParameters) -> Tensor:
    """Row-stochastic (L, J) coefficients: softmax(tanh(X' W_k1) W_k2) over widths."""
    hidden = ad.tanh_map(ad.matmul(xprime, params.w_k1))
    return ad.softmax_axis(ad.matmul(hidden, params.w_k2), axis=1)


def time_coefficients(xprime: Tensor, params: TdcParameters) -> Tensor:
    """Stochastic (1, N) coefficients: softmax(W_t2 tanh(W_t1 X')) over clips."""
    hidden = ad.tanh_map(ad.matmul(params.w_t1, xprime))
    return ad.softmax_axis(ad.matmul(params.w_t2, hidden), axis=1)


def fuse(conv_results, a_k: Tensor, a_t: Tensor) -> Tensor:
    """Mix the J results per channel with a_k, then pool over clips with a_t."""
    L, N = conv_results[0].shape
    if a_k.shape != (L, len(conv_results)):
        raise DimensionError(f"channel coefficients {a_k.shape} do not match "
                             f"{len(conv_results)} results of shape {(L, N)}")
    if a_t.shape != (1, N):
        raise DimensionError(f"time coefficients {a_t.shape} do not match clip count {N}")
    mixed = None
    for j, xj in enumerate(conv_results):
        term = ad.mul(ad.narrow(a_k, 1, j, 1), xj)  # (L,1) broadcast over (L,N)
        mixed = term if mixed is None else ad.add(mixed, term)
    return ad.matmul(a_t, ad.transpose2d(mixed))  # (1, L)


def tdc_forward(x: Tensor, params: TdcParameters, capture=None) -> Tensor:
    """Full block: convolutions, reduction, both coefficient heads, fusion.

    When `capture` is a dict it receives the realized coefficient values under
    keys "a_k" (L, J) and "a_t" (1, N).
    """
    results = multi_scale_conv(x, params)
    xprime = reduce_concat_conv(results, params)
    a_k = channel_coefficients(xprime, params)
    a_t = time_coefficients(xprime, params)
    if capture is not None:
        capture["a_k"] = a_k.values.copy()
        capture["a_t"] = a_t.values.copy()
    return fuse(results, a_k, a_t)
