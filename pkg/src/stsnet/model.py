"""The dual-stream convolutional network.

Each enabled stream runs the same stack over its own input layout::

    LFE  conv k7 -> BN -> LReLU                                  full resolution
    S-MFE  2 x [conv k3 -> BN -> LReLU]          -> feat_S       1x
    ZI -> SE                                     -> x_m          1/2
    M-MFE  conv k3 -> BN -> LReLU                -> feat_M       1/2
    ZI -> SE (same weights as above)             -> x_l          1/4
    L-MFE  inception branches k1/k3/k5/k7        -> feat_L       1/4
    GT  per range: 1x1 conv to 2c channels, then A * sigmoid(B)

The gated range features of both streams are flattened and concatenated,
then a shared FC layer (HFE, 500 units, LReLU) and a linear classifier
produce the logits.

The temporal stream sees ``(B, m, T, f)`` (dimensions as channels); the
structural stream sees ``(B, T, 2m-1, f)`` (time steps as channels).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping


from .autodiff import (
    Tensor,
    concat,
    conv2d,
    flatten,
    fully_connected,
    gated_linear_unit,
    leaky_relu,
    maxpool2d,
)
from .errors import ConfigurationError, DimensionError
from .nn import Module

RANGES = ("s", "m", "l")
STREAMS = ("temporal", "structural")


@dataclass
class ModelConfig:
    m: int = 7
    length: int = 32
    n_features: int = 8
    n_classes: int = 10
    lfe_c: int = 16
    mfe_c: int = 32
    lfe_k: int = 7
    mfe_k: int = 3
    inception_kernels: tuple[int, ...] = (1, 3, 5, 7)
    zi_size: int = 2
    hfe_dim: int = 500
    enable_gating: bool = True
    enable_structural_stream: bool = True
    enable_temporal_stream: bool = True
    leaky_slope: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        self.inception_kernels = tuple(self.inception_kernels)
        if not (self.enable_structural_stream or self.enable_temporal_stream):
            raise ConfigurationError("at least one stream must be enabled")
        if self.hfe_dim < self.n_classes:
            raise ConfigurationError("hfe_dim must be at least n_classes")
        if self.n_classes < 2:
            raise ConfigurationError("need at least two classes")
        if self.mfe_c % len(self.inception_kernels):
            raise ConfigurationError("mfe_c must split evenly across the inception branches")
        if any(k % 2 == 0 for k in (self.lfe_k, self.mfe_k, *self.inception_kernels)):
            raise ConfigurationError("kernel sizes must be odd for same padding")
        for stream in self.streams:
            h, w = self.input_shape(stream)[1:]
            if min(h, w) < self.zi_size**2:
                raise ConfigurationError(f"{stream} input {h}x{w} is too small for two zoom-in poolings")

    @property
    def streams(self) -> tuple[str, ...]:
        out = []
        if self.enable_temporal_stream:
            out.append("temporal")
        if self.enable_structural_stream:
            out.append("structural")
        return tuple(out)

    @property
    def traversal_length(self) -> int:
        return 2 * self.m - 1

    def input_shape(self, stream: str) -> tuple[int, int, int]:
        if stream == "temporal":
            return (self.m, self.length, self.n_features)
        return (self.length, self.traversal_length, self.n_features)

    def range_shapes(self, stream: str) -> dict[str, tuple[int, int]]:
        """Spatial extents of feat_S, feat_M and feat_L."""
        _, h, w = self.input_shape(stream)
        z = self.zi_size
        h2, w2 = (h - z) // z + 1, (w - z) // z + 1
        h4, w4 = (h2 - z) // z + 1, (w2 - z) // z + 1
        return {"s": (h, w), "m": (h2, w2), "l": (h4, w4)}

    def stream_width(self, stream: str) -> int:
        return self.mfe_c * sum(h * w for h, w in self.range_shapes(stream).values())

    @property
    def hfe_input_width(self) -> int:
        return sum(self.stream_width(s) for s in self.streams)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inception_kernels"] = list(self.inception_kernels)
        return d


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form number of learnable scalars for ``cfg``."""
    c, lc, kk = cfg.mfe_c, cfg.lfe_c, cfg.mfe_k**2
    bn = 2
    total = 0
    for stream in cfg.streams:
        c_in = cfg.input_shape(stream)[0]
        total += c_in * lc * cfg.lfe_k**2 + bn * lc            # LFE
        total += lc * c * kk + c * c * kk + 2 * bn * c           # S-MFE
        total += c * c * kk + bn * c                             # SE (counted once)
        total += c * c * kk + bn * c                             # M-MFE
        branch = c // len(cfg.inception_kernels)
        total += sum(c * branch * k * k + bn * branch for k in cfg.inception_kernels)  # L-MFE
        halves = 2 if cfg.enable_gating else 1
        total += len(RANGES) * halves * (c * c + c)              # GT
    total += cfg.hfe_input_width * cfg.hfe_dim + cfg.hfe_dim     # HFE
    total += cfg.hfe_dim * cfg.n_classes + cfg.n_classes         # CLS
    return total


class DualStreamModel(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__(seed=cfg.seed, slope=cfg.leaky_slope)
        self.cfg = cfg
        c = cfg.mfe_c
        branch = c // len(cfg.inception_kernels)
        for stream in cfg.streams:
            c_in = cfg.input_shape(stream)[0]
            self.add_conv_bn(f"{stream}.lfe", "", c_in, cfg.lfe_c, cfg.lfe_k)
            self.add_conv_bn(f"{stream}.smfe", "0", cfg.lfe_c, c, cfg.mfe_k)
            self.add_conv_bn(f"{stream}.smfe", "1", c, c, cfg.mfe_k)
            # one parameter set, separate running statistics per application site
            self.add_conv_bn(f"{stream}.se", "", c, c, cfg.mfe_k, sites=("_m", "_l"))
            self.add_conv_bn(f"{stream}.mmfe", "", c, c, cfg.mfe_k)
            for k in cfg.inception_kernels:
                self.add_conv_bn(f"{stream}.lmfe", f"_k{k}", c, branch, k)
            for r in RANGES:
                self.add_conv(f"{stream}.gt.{r}_value", c, c, 1, bias=True)
                if cfg.enable_gating:
                    self.add_conv(f"{stream}.gt.{r}_gate", c, c, 1, bias=True)
        self.add_fc("shared.hfe.fc", cfg.hfe_input_width, cfg.hfe_dim)
        self.add_fc("shared.cls.fc", cfg.hfe_dim, cfg.n_classes)

    # blocks --------------------------------------------------------------------

    def lfe_forward(self, x: Tensor, stream: str) -> Tensor:
        return self.conv_bn_act(x, f"{stream}.lfe")

    def shared_encoder(
        self, x: Tensor, stream: str, site: str, params: Mapping[str, Tensor] | None = None
    ) -> Tensor:
        pooled = maxpool2d(x, self.cfg.zi_size, self.cfg.zi_size)
        return self.conv_bn_act(pooled, f"{stream}.se", site=site, params=params)

    def mfe_forward(
        self,
        x_low: Tensor,
        stream: str,
        se_params: Mapping[str, Mapping[str, Tensor]] | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Short/medium/long-range features at 1x, 1/2 and 1/4 resolution.

        ``se_params`` optionally substitutes the shared-encoder parameters
        at one site (``"_m"`` or ``"_l"``); it exists to inspect how the two
        sites contribute to the shared gradient.
        """
        se_params = se_params or {}
        feat_s = self.conv_bn_act(x_low, f"{stream}.smfe", "0")
        feat_s = self.conv_bn_act(feat_s, f"{stream}.smfe", "1")
        x_m = self.shared_encoder(feat_s, stream, "_m", se_params.get("_m"))
        feat_m = self.conv_bn_act(x_m, f"{stream}.mmfe")
        x_l = self.shared_encoder(x_m, stream, "_l", se_params.get("_l"))
        feat_l = concat(
            [self.conv_bn_act(x_l, f"{stream}.lmfe", f"_k{k}") for k in self.cfg.inception_kernels], axis=1
        )
        return feat_s, feat_m, feat_l

    def gate_forward(self, feat: Tensor, stream: str, r: str) -> Tensor:
        p = self.params
        value = conv2d(feat, p[f"{stream}.gt.{r}_value.weight"], p[f"{stream}.gt.{r}_value.bias"])
        if not self.cfg.enable_gating:
            return value
        gate = conv2d(feat, p[f"{stream}.gt.{r}_gate.weight"], p[f"{stream}.gt.{r}_gate.bias"])
        return gated_linear_unit(concat([value, gate], axis=1), axis=1)

    def stream_forward(self, x: Tensor, stream: str, taps: dict | None = None) -> Tensor:
        x_low = self.lfe_forward(x, stream)
        feats = self.mfe_forward(x_low, stream)
        gated = [self.gate_forward(f, stream, r) for f, r in zip(feats, RANGES)]
        if taps is not None:
            taps[f"{stream}.lfe"] = x_low
            taps.update({f"{stream}.feat_{r}": f for f, r in zip(feats, RANGES)})
            taps.update({f"{stream}.gated_{r}": g for g, r in zip(gated, RANGES)})
        return concat([flatten(g) for g in gated], axis=1)

    # full network --------------------------------------------------------------

    def _check_input(self, x, stream: str) -> Tensor:
        if x is None:
            raise DimensionError(f"the {stream} stream is enabled but received no input")
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1:] != self.cfg.input_shape(stream):
            raise DimensionError(f"{stream} input must be (B, {self.cfg.input_shape(stream)}), got {x.shape}")
        return x

    def forward(self, x_tdf, x_dtf, taps: dict | None = None) -> Tensor:
        inputs = {"temporal": x_tdf, "structural": x_dtf}
        parts = [self.stream_forward(self._check_input(inputs[s], s), s, taps) for s in self.cfg.streams]
        merged = concat(parts, axis=1)
        p = self.params
        hidden = leaky_relu(fully_connected(merged, p["shared.hfe.fc.weight"], p["shared.hfe.fc.bias"]), self.slope)
        if taps is not None:
            taps["hfe_input"] = merged
            taps["hfe"] = hidden
        return fully_connected(hidden, p["shared.cls.fc.weight"], p["shared.cls.fc.bias"])

    __call__ = forward
