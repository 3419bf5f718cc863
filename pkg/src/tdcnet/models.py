"""Model assembly: the max-pool baseline, intra-type and cross-type dynamic
convolution branches, the two full network variants, and the MLP classifier.

Variants
--------
baseline         per-type max pooling over clips -> classifier
intdcm-only      one dynamic-convolution block per concept type -> classifier
crtdcm-si-only   one block over all types stacked into an (L, N) matrix
crtdcm-co-only   per-type convolutions with coefficient heads conditioned on
                 the joint representation of all types
tdcmn-si         concat(intra branch, stacked cross branch) -> classifier
tdcmn-co         concat(intra branch, coupled cross branch) -> classifier
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .tdc import (TdcConfig, TdcParameters, uniform_init, tdc_forward,
                  _default_hidden_n, _default_hidden_l)

VARIANTS = ("baseline", "intdcm-only", "crtdcm-si-only", "crtdcm-co-only",
            "tdcmn-si", "tdcmn-co")


@dataclass
class ModelConfig:
    concept_types: list          # [(name, L_i)]
    clips: int
    num_classes: int
    variant: str = "tdcmn-co"
    kernel_widths: tuple = (1, 3, 5)
    classifier_hidden: tuple = None  # None selects (max(256, L),)
    hidden_n: int = 0
    hidden_l: int = 0

    def __post_init__(self):
        self.concept_types = [(str(n), int(l)) for n, l in self.concept_types]
        if not self.concept_types:
            raise ConfigurationError("at least one concept type is required")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; "
                                     f"expected one of {VARIANTS}")
        self.kernel_widths = tuple(int(w) for w in self.kernel_widths)
        if self.classifier_hidden is None:
            self.classifier_hidden = (max(256, self.total_channels),)
        else:
            self.classifier_hidden = tuple(int(h) for h in self.classifier_hidden)

    @property
    def total_channels(self):
        return sum(l for _, l in self.concept_types)

    @property
    def num_widths(self):
        return len(self.kernel_widths)

    def to_dict(self):
        return {
            "concept_types": [[n, l] for n, l in self.concept_types],
            "clips": self.clips,
            "num_classes": self.num_classes,
            "variant": self.variant,
            "kernel_widths": list(self.kernel_widths),
            "classifier_hidden": list(self.classifier_hidden),
            "hidden_n": self.hidden_n,
            "hidden_l": self.hidden_l,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(concept_types=[tuple(t) for t in d["concept_types"]],
                   clips=int(d["clips"]), num_classes=int(d["num_classes"]),
                   variant=d["variant"], kernel_widths=tuple(d["kernel_widths"]),
                   classifier_hidden=tuple(d["classifier_hidden"]),
                   hidden_n=int(d.get("hidden_n", 0)), hidden_l=int(d.get("hidden_l", 0)))


@dataclass
class CrCoParameters:
    """Weights of the coupled cross-type branch.

    Per-type multi-width convolutions plus one channel coefficient head per
    type and a shared time head with one softmax row per type, all conditioned
    on the joint (L, N) representation.
    """

    concept_types: list
    kernel_widths: tuple
    conv_w: dict = field(default_factory=dict)   # type -> [ (L_i, L_i, w) ]
    conv_b: dict = field(default_factory=dict)
    w_k1: dict = field(default_factory=dict)     # type -> (N, n)
    w_k2: dict = field(default_factory=dict)     # type -> (n, J)
    w_t1: Tensor = None                          # (l, L)
    w_t2: Tensor = None                          # (O, l)

    @classmethod
    def init(cls, config: ModelConfig, rng):
        p = cls(concept_types=list(config.concept_types),
                kernel_widths=config.kernel_widths)
        L = config.total_channels
        N, J = config.clips, config.num_widths
        n = config.hidden_n or _default_hidden_n(N)
        l = config.hidden_l or _default_hidden_l(L)
        for name, li in config.concept_types:
            p.conv_w[name] = [uniform_init(rng, (li, li, w), fan_in=li * w)
                              for w in config.kernel_widths]
            p.conv_b[name] = [uniform_init(rng, (li,), fan_in=li * w)
                              for w in config.kernel_widths]
            p.w_k1[name] = uniform_init(rng, (N, n), fan_in=N)
            p.w_k2[name] = uniform_init(rng, (n, J), fan_in=n)
        p.w_t1 = uniform_init(rng, (l, L), fan_in=L)
        p.w_t2 = uniform_init(rng, (len(config.concept_types), l), fan_in=l)
        return p

    def named_tensors(self, prefix=""):
        for name, _ in self.concept_types:
            for j, w in enumerate(self.kernel_widths):
                yield f"{prefix}{name}.conv{w}.w", self.conv_w[name][j]
                yield f"{prefix}{name}.conv{w}.b", self.conv_b[name][j]
            yield f"{prefix}{name}.w_k1", self.w_k1[name]
            yield f"{prefix}{name}.w_k2", self.w_k2[name]
        yield f"{prefix}w_t1", self.w_t1
        yield f"{prefix}w_t2", self.w_t2


def classifier_forward(x: Tensor, layers) -> Tensor:
    """Affine -> tanh -> ... -> affine over a (1, d) row."""
    w0 = layers[0][0]
    if x.shape[1] != w0.shape[0]:
        raise DimensionError(f"classifier expects input width {w0.shape[0]}, "
                             f"got {x.shape[1]}")
    for i, (w, b) in enumerate(layers):
        x = ad.add(ad.matmul(x, w), b)
        if i < len(layers) - 1:
            x = ad.tanh_map(x)
    return x


class Model:
    """One network instance: configuration plus named parameter tensors."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        v = config.variant
        self.intra = {}
        self.cr_si = None
        self.cr_co = None
        if v in ("intdcm-only", "tdcmn-si", "tdcmn-co"):
            for name, li in config.concept_types:
                cfg = TdcConfig(li, config.clips, config.kernel_widths,
                                config.hidden_n, config.hidden_l)
                self.intra[name] = TdcParameters.init(cfg, rng)
        if v in ("crtdcm-si-only", "tdcmn-si"):
            cfg = TdcConfig(config.total_channels, config.clips, config.kernel_widths,
                            config.hidden_n, config.hidden_l)
            self.cr_si = TdcParameters.init(cfg, rng)
        if v in ("crtdcm-co-only", "tdcmn-co"):
            self.cr_co = CrCoParameters.init(config, rng)
        d = self.feature_width()
        widths = [d, *config.classifier_hidden, config.num_classes]
        self.classifier = []
        for a, b in zip(widths[:-1], widths[1:]):
            self.classifier.append((uniform_init(rng, (a, b), fan_in=a),
                                    uniform_init(rng, (1, b), fan_in=a)))

    def feature_width(self):
        L = self.config.total_channels
        return 2 * L if self.config.variant in ("tdcmn-si", "tdcmn-co") else L

    @property
    def has_tdc(self):
        return self.config.variant != "baseline"

    def named_parameters(self):
        for name in sorted(self.intra):
            yield from self.intra[name].named_tensors(prefix=f"in.{name}.")
        if self.cr_si is not None:
            yield from self.cr_si.named_tensors(prefix="cr_si.")
        if self.cr_co is not None:
            yield from self.cr_co.named_tensors(prefix="cr_co.")
        for i, (w, b) in enumerate(self.classifier):
            yield f"clf.{i}.w", w
            yield f"clf.{i}.b", b

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # ------------------------------------------------------------------
    # forward passes
    # ------------------------------------------------------------------

    def _inputs(self, sample):
        out = []
        for name, li in self.config.concept_types:
            seq = sample.sequence(name)
            if seq.scores.shape != (li, self.config.clips):
                raise DimensionError(
                    f"sample {sample.id}: {name} scores {seq.scores.shape} do not "
                    f"match model ({li}, {self.config.clips})")
            out.append(Tensor(seq.scores))
        return out

    def baseline_forward(self, sample):
        pooled = [ad.transpose2d(ad.max_axis(x, axis=1)) for x in self._inputs(sample)]
        return classifier_forward(ad.concat_axis(pooled, axis=1), self.classifier)

    def intdcm_forward(self, sample, capture=None):
        outs = []
        for (name, _), x in zip(self.config.concept_types, self._inputs(sample)):
            cap = {} if capture is not None else None
            outs.append(tdc_forward(x, self.intra[name], capture=cap))
            if capture is not None:
                capture[("in", name)] = cap
        return ad.concat_axis(outs, axis=1)

    def crtdcm_si_forward(self, sample, capture=None):
        stacked = ad.concat_axis(self._inputs(sample), axis=0)
        cap = {} if capture is not None else None
        out = tdc_forward(stacked, self.cr_si, capture=cap)
        if capture is not None:
            capture[("cr_si", "all")] = cap
        return out

    def crtdcm_co_forward(self, sample, capture=None):
        p = self.cr_co
        inputs = self._inputs(sample)
        per_type_results = []
        summed = []
        for (name, _), x in zip(self.config.concept_types, inputs):
            results = [ad.conv1d_same(x, w, b)
                       for w, b in zip(p.conv_w[name], p.conv_b[name])]
            per_type_results.append(results)
            s = results[0]
            for r in results[1:]:
                s = ad.add(s, r)
            summed.append(s)
        xprime = ad.concat_axis(summed, axis=0)  # (L, N)
        a_t_all = ad.softmax_axis(
            ad.matmul(p.w_t2, ad.tanh_map(ad.matmul(p.w_t1, xprime))), axis=1)
        outs = []
        row = 0
        for i, ((name, li), results) in enumerate(zip(self.config.concept_types,
                                                      per_type_results)):
            full = ad.softmax_axis(
                ad.matmul(ad.tanh_map(ad.matmul(xprime, p.w_k1[name])), p.w_k2[name]),
                axis=1)
            a_k = ad.narrow(full, 0, row, li)        # this type's block of (L, J)
            a_t = ad.narrow(a_t_all, 0, i, 1)        # (1, N)
            if capture is not None:
                capture[("cr_co", name)] = {"a_k": a_k.values.copy(),
                                            "a_t": a_t.values.copy()}
            mixed = None
            for j, xj in enumerate(results):
                term = ad.mul(ad.narrow(a_k, 1, j, 1), xj)
                mixed = term if mixed is None else ad.add(mixed, term)
            outs.append(ad.matmul(a_t, ad.transpose2d(mixed)))  # (1, L_i)
            row += li
        return ad.concat_axis(outs, axis=1)

    def features(self, sample, capture=None):
        v = self.config.variant
        if v == "intdcm-only":
            return self.intdcm_forward(sample, capture)
        if v == "crtdcm-si-only":
            return self.crtdcm_si_forward(sample, capture)
        if v == "crtdcm-co-only":
            return self.crtdcm_co_forward(sample, capture)
        if v == "tdcmn-si":
            return ad.concat_axis([self.intdcm_forward(sample, capture),
                                   self.crtdcm_si_forward(sample, capture)], axis=1)
        if v == "tdcmn-co":
            return ad.concat_axis([self.intdcm_forward(sample, capture),
                                   self.crtdcm_co_forward(sample, capture)], axis=1)
        raise ConfigurationError(f"variant {v!r} has no feature branch")

    def forward(self, sample, capture=None):
        """Logits of shape (1, num_classes) for one sample."""
        if self.config.variant == "baseline":
            return self.baseline_forward(sample)
        return classifier_forward(self.features(sample, capture), self.classifier)
