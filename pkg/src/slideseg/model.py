"""Configurable U-Net family for 128x128 multispectral patches.

One frame, three switchboards:

- block_kind: classic double-conv blocks, or residual blocks with
  parallel 2x2/3x3 branches and a skip connection.
- attention_kind: none, squeeze-excitation, CBAM, or the multi-head
  axis-pooling attention; one attention layer follows every conv block
  in both the encoder and the decoder.
- heads: a single 128x128 head, or three heads at 64/128/256 whose
  averaged probabilities form the inference-time prediction.

The encoder stage shapes are fixed for any input channel count:
64x64x64 -> 32x32x128 -> 16x16x256 -> 8x8x512 -> 8x8x1024 (with the
default channel widths), and the decoder mirrors back to 128x128x64.

In double_conv mode each decoder stage is bilinear 2x upsampling, a 2x2
conv unit halving the channels, skip concatenation, and a double conv.
In res_conv mode the bottleneck block keeps its channel count (a true
identity residual) and a 1x1 single conv unit expands to the bottleneck
width; decoder stages reduce with a 1x1 unit and merge skips by
addition, which is what keeps the residual variant lighter than the
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import IncompatibleCheckpoint, InvalidConfig, InvalidKind, ShapeMismatch

INPUT_SIZE = 128
NUM_CLASSES = 2

BLOCK_KINDS = ("double_conv", "res_conv")
ATTENTION_KINDS = ("none", "se", "cbam", "pro_att")
HEAD_KINDS = ("single_128", "triple_64_128_256")

DEFAULT_ENCODER_CHANNELS = (64, 128, 256, 512, 1024)

# stage spatial sizes for a 128x128 input: block resolution per encoder stage
_STAGE_SIZES = (128, 64, 32, 16, 8)


@dataclass
class ModelConfig:
    """Architecture switchboard; invalid combinations raise InvalidConfig."""

    input_channels: int = 14
    block_kind: str = "double_conv"
    attention_kind: str = "none"
    heads: str = "single_128"
    encoder_channels: tuple[int, ...] = DEFAULT_ENCODER_CHANNELS
    dropout: float = 0.2
    leaky_slope: float = 0.01
    attention_heads: int = 4
    se_reduction: int = 16

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.validate()

    def validate(self):
        if not (14 <= self.input_channels <= 26):
            raise InvalidConfig(f"input_channels must be in [14, 26], got {self.input_channels}")
        if self.block_kind not in BLOCK_KINDS:
            raise InvalidConfig(f"block_kind must be one of {BLOCK_KINDS}, got '{self.block_kind}'")
        if self.attention_kind not in ATTENTION_KINDS:
            raise InvalidConfig(
                f"attention_kind must be one of {ATTENTION_KINDS}, got '{self.attention_kind}'"
            )
        if self.heads not in HEAD_KINDS:
            raise InvalidConfig(f"heads must be one of {HEAD_KINDS}, got '{self.heads}'")
        if len(self.encoder_channels) != 5:
            raise InvalidConfig("encoder_channels must list 5 stage widths")
        if any(b <= a for a, b in zip(self.encoder_channels, self.encoder_channels[1:])):
            raise InvalidConfig(f"encoder_channels must be strictly increasing, got {self.encoder_channels}")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidConfig(f"dropout must be in [0, 1), got {self.dropout}")
        if self.attention_heads < 1:
            raise InvalidConfig("attention_heads must be >= 1")
        if self.se_reduction < 1:
            raise InvalidConfig("se_reduction must be >= 1")
        if self.attention_kind == "pro_att":
            for c in self.encoder_channels:
                if c % self.attention_heads:
                    raise InvalidConfig(
                        f"pro_att requires channel widths divisible by attention_heads; "
                        f"{c} % {self.attention_heads} != 0"
                    )
            for s in _STAGE_SIZES:
                if s % self.attention_heads:
                    raise InvalidConfig(
                        f"pro_att requires stage sizes divisible by attention_heads; "
                        f"{s} % {self.attention_heads} != 0"
                    )

    def width_scaled(self, factor: float) -> "ModelConfig":
        """Copy with channel widths scaled, rounded to attention_heads multiples."""
        unit = max(1, self.attention_heads)
        scaled = tuple(
            max(unit, int(round(c * factor / unit)) * unit) for c in self.encoder_channels
        )
        return replace(self, encoder_channels=scaled)


class FeatureMapShape(NamedTuple):
    """Spatial extent and channel count of one feature map."""

    height: int
    width: int
    channels: int


@dataclass
class HeadOutputs:
    """Per-resolution class-probability maps, channels last ([N, S, S, 2])."""

    probs_128: torch.Tensor
    probs_64: torch.Tensor | None = None
    probs_256: torch.Tensor | None = None

    def as_dict(self) -> dict[int, torch.Tensor]:
        out = {}
        if self.probs_64 is not None:
            out[64] = self.probs_64
        out[128] = self.probs_128
        if self.probs_256 is not None:
            out[256] = self.probs_256
        return out


class ConvUnit(nn.Module):
    """Conv -> BatchNorm -> LeakyReLU with size-preserving padding.

    Even kernels pad asymmetrically (right/bottom) so output size equals
    input size.
    """

    def __init__(self, cin: int, cout: int, kernel: int, slope: float):
        super().__init__()
        if kernel % 2:
            self.pad = nn.Identity()
            conv_padding = kernel // 2
        else:
            self.pad = nn.ZeroPad2d((0, kernel - 1, 0, kernel - 1))
            conv_padding = 0
        self.conv = nn.Conv2d(cin, cout, kernel, padding=conv_padding)
        self.bn = nn.BatchNorm2d(cout)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x):
        return self.act(self.bn(self.conv(self.pad(x))))


class DoubleConv(nn.Module):
    """Two consecutive 3x3 conv units."""

    def __init__(self, cin: int, cout: int, slope: float):
        super().__init__()
        self.unit1 = ConvUnit(cin, cout, 3, slope)
        self.unit2 = ConvUnit(cout, cout, 3, slope)

    def forward(self, x):
        return self.unit2(self.unit1(x))


class ResConv(nn.Module):
    """Residual block with parallel 2x2 and 3x3 branches.

    x2 = unit_2x2(x) + unit_3x3(x); x3 = unit_fuse(x2); output is
    x3 + project(x), where project is the identity when the channel
    count is preserved and a 1x1 conv otherwise.
    """

    def __init__(self, cin: int, cout: int, slope: float):
        super().__init__()
        self.branch_2x2 = ConvUnit(cin, cout, 2, slope)
        self.branch_3x3 = ConvUnit(cin, cout, 3, slope)
        self.fuse = ConvUnit(cout, cout, 3, slope)
        self.project = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        x2 = self.branch_2x2(x) + self.branch_3x3(x)
        x3 = self.fuse(x2)
        return x3 + self.project(x)


class SqueezeExcite(nn.Module):
    """Channel gating by global average pooling and a bottleneck MLP."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        squeezed = x.mean(dim=(2, 3))
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))
        return x * gate[:, :, None, None]


class CBAM(nn.Module):
    """Channel attention (shared MLP over avg+max pools) then spatial attention."""

    def __init__(self, channels: int, reduction: int, spatial_kernel: int = 7):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.spatial = nn.Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2)

    def forward(self, x):
        avg = self.fc2(F.relu(self.fc1(x.mean(dim=(2, 3)))))
        peak = self.fc2(F.relu(self.fc1(x.amax(dim=(2, 3)))))
        x = x * torch.sigmoid(avg + peak)[:, :, None, None]
        planes = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.spatial(planes))


class AxisAttention(nn.Module):
    """Multi-head attention over axis-pooled 2-D views of the feature map.

    The map is reduced along each of its three axes with max and average
    pooling. Both channel-bearing maps share one attention module (the
    pooled spatial axis is the sequence, channels are the embedding);
    the channel-pooled [H, W] map gets its own. Max/avg outputs of the
    same axis are summed before the sigmoid, and the resulting per-axis
    weights are broadcast-multiplied with the input.
    """

    def __init__(self, channels: int, spatial: int, heads: int):
        super().__init__()
        self.axis_attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.plane_attn = nn.MultiheadAttention(spatial, heads, batch_first=True)
        self.spatial = spatial

    def _self_attend(self, attn: nn.MultiheadAttention, seq: torch.Tensor) -> torch.Tensor:
        out, _ = attn(seq, seq, seq, need_weights=False)
        return out

    def forward(self, x):
        n, c, h, w = x.shape
        if h != self.spatial or w != self.spatial:
            raise ShapeMismatch(f"attention built for {self.spatial}x{self.spatial}, got {h}x{w}")

        # pool over H: [N, W, C] sequences
        along_h = torch.sigmoid(
            self._self_attend(self.axis_attn, x.amax(dim=2).transpose(1, 2))
            + self._self_attend(self.axis_attn, x.mean(dim=2).transpose(1, 2))
        )
        # pool over W: [N, H, C] sequences
        along_w = torch.sigmoid(
            self._self_attend(self.axis_attn, x.amax(dim=3).transpose(1, 2))
            + self._self_attend(self.axis_attn, x.mean(dim=3).transpose(1, 2))
        )
        # pool over C: [N, H, W] map, rows as sequence positions
        along_c = torch.sigmoid(
            self._self_attend(self.plane_attn, x.amax(dim=1))
            + self._self_attend(self.plane_attn, x.mean(dim=1))
        )

        x = x * along_h.permute(0, 2, 1)[:, :, None, :]
        x = x * along_w.permute(0, 2, 1)[:, :, :, None]
        return x * along_c[:, None, :, :]


def make_attention(kind: str, channels: int, spatial: int, cfg: ModelConfig) -> nn.Module:
    if kind == "none":
        return nn.Identity()
    if kind == "se":
        return SqueezeExcite(channels, cfg.se_reduction)
    if kind == "cbam":
        return CBAM(channels, cfg.se_reduction)
    if kind == "pro_att":
        return AxisAttention(channels, spatial, cfg.attention_heads)
    raise InvalidKind(f"unknown attention kind '{kind}'")


class _Head(nn.Module):
    def __init__(self, cin: int, dropout: float):
        super().__init__()
        self.drop = nn.Dropout(dropout)
        self.conv = nn.Conv2d(cin, NUM_CLASSES, 1)

    def forward(self, x):
        logits = self.conv(self.drop(x))
        return F.softmax(logits, dim=1).permute(0, 2, 3, 1)


class UNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        slope = cfg.leaky_slope
        widths = cfg.encoder_channels
        residual = cfg.block_kind == "res_conv"
        block = (lambda cin, cout: ResConv(cin, cout, slope)) if residual else (
            lambda cin, cout: DoubleConv(cin, cout, slope)
        )

        enc_in = (cfg.input_channels,) + widths[:3]
        enc_out = widths[:4]
        self.enc_blocks = nn.ModuleList(block(i, o) for i, o in zip(enc_in, enc_out))
        self.enc_attn = nn.ModuleList(
            make_attention(cfg.attention_kind, o, s, cfg)
            for o, s in zip(enc_out, _STAGE_SIZES[:4])
        )
        self.pool = nn.MaxPool2d(2)

        # bottleneck: residual mode keeps the block channel-preserving and
        # expands with a 1x1 single conv unit so the stage still emits the
        # widest feature map
        if residual:
            self.bottleneck = block(widths[3], widths[3])
            self.bottleneck_attn = make_attention(cfg.attention_kind, widths[3], _STAGE_SIZES[4], cfg)
            self.bottleneck_expand = ConvUnit(widths[3], widths[4], 1, slope)
        else:
            self.bottleneck = block(widths[3], widths[4])
            self.bottleneck_attn = make_attention(cfg.attention_kind, widths[4], _STAGE_SIZES[4], cfg)
            self.bottleneck_expand = nn.Identity()

        self.upsample = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        dec_in = widths[4:0:-1]   # 1024, 512, 256, 128
        dec_out = widths[3::-1]   # 512, 256, 128, 64
        up_kernel = 1 if residual else 2
        self.up_units = nn.ModuleList(ConvUnit(i, o, up_kernel, slope) for i, o in zip(dec_in, dec_out))
        self.dec_blocks = nn.ModuleList(
            block(o if residual else 2 * o, o) for o in dec_out
        )
        self.dec_attn = nn.ModuleList(
            make_attention(cfg.attention_kind, o, s, cfg)
            for o, s in zip(dec_out, _STAGE_SIZES[3::-1])
        )

        self.head_128 = _Head(widths[0], cfg.dropout)
        if cfg.heads == "triple_64_128_256":
            self.head_64 = _Head(widths[1], cfg.dropout)
            self.head_256_conv = ConvUnit(widths[0], widths[0], 3, slope)
            self.head_256 = _Head(widths[0], cfg.dropout)
        else:
            self.head_64 = None
            self.head_256_conv = None
            self.head_256 = None

        self.last_stage_shapes: dict[str, FeatureMapShape] = {}
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=self.cfg.leaky_slope, nonlinearity="leaky_relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def _check_input(self, x: torch.Tensor):
        if x.ndim != 4:
            raise ShapeMismatch(f"expected a [N, {INPUT_SIZE}, {INPUT_SIZE}, C] batch, got ndim={x.ndim}")
        n, h, w, c = x.shape
        if h != INPUT_SIZE or w != INPUT_SIZE:
            raise ShapeMismatch(f"expected {INPUT_SIZE}x{INPUT_SIZE} inputs, got {h}x{w}")
        if c != self.cfg.input_channels:
            raise ShapeMismatch(f"model built for {self.cfg.input_channels} channels, got {c}")

    @staticmethod
    def _hwc(x: torch.Tensor) -> FeatureMapShape:
        return FeatureMapShape(height=x.shape[2], width=x.shape[3], channels=x.shape[1])

    def forward(self, batch) -> HeadOutputs:
        """Channels-last [N, 128, 128, C] batch -> per-head probability maps."""
        x = torch.as_tensor(np.asarray(batch) if not isinstance(batch, torch.Tensor) else batch)
        x = x.float()
        self._check_input(x)
        x = x.permute(0, 3, 1, 2)

        shapes = {}
        skips = []
        for i, (conv, attn) in enumerate(zip(self.enc_blocks, self.enc_attn), start=1):
            x = attn(conv(x))
            skips.append(x)
            x = self.pool(x)
            shapes[f"enc{i}"] = self._hwc(x)

        x = self.bottleneck_expand(self.bottleneck_attn(self.bottleneck(x)))
        shapes["enc5"] = self._hwc(x)

        residual = self.cfg.block_kind == "res_conv"
        dec_64 = None
        for i, (up, conv, attn) in enumerate(zip(self.up_units, self.dec_blocks, self.dec_attn), start=1):
            skip = skips[-i]
            x = up(self.upsample(x))
            x = x + skip if residual else torch.cat([x, skip], dim=1)
            x = attn(conv(x))
            shapes[f"dec{i}"] = self._hwc(x)
            if i == 3:
                dec_64 = x
        self.last_stage_shapes = shapes

        out = HeadOutputs(probs_128=self.head_128(x))
        if self.head_64 is not None:
            out.probs_64 = self.head_64(dec_64)
            out.probs_256 = self.head_256(self.head_256_conv(self.upsample(x)))
        return out


def build_model(cfg: ModelConfig) -> UNet:
    return UNet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _resize_probs(probs: torch.Tensor, size: int) -> torch.Tensor:
    if probs.shape[1] == size and probs.shape[2] == size:
        return probs
    resized = F.interpolate(
        probs.permute(0, 3, 1, 2), size=(size, size), mode="bilinear", align_corners=False
    ).permute(0, 2, 3, 1)
    resized = resized.clamp(min=0.0)
    return resized / resized.sum(dim=-1, keepdim=True).clamp(min=1e-12)


def ensemble_average(heads: HeadOutputs) -> torch.Tensor:
    """Equal-weight average of all heads after resizing to 128x128."""
    maps = [_resize_probs(p, INPUT_SIZE) for p in heads.as_dict().values()]
    if len(maps) == 1:
        return maps[0]
    averaged = torch.stack(maps).mean(dim=0)
    return averaged / averaged.sum(dim=-1, keepdim=True).clamp(min=1e-12)


def predict_mask(probs) -> np.ndarray:
    """Per-pixel argmax; an exact 0.5/0.5 tie resolves to non-landslide."""
    probs = np.asarray(probs.detach().cpu() if isinstance(probs, torch.Tensor) else probs)
    return (probs[..., 1] > probs[..., 0]).astype(np.uint8)


# -- checkpointing -------------------------------------------------------------

def save_checkpoint(model: UNet, path, meta: dict | None = None) -> None:
    payload = {
        "model_config": asdict(model.cfg),
        "state_dict": {k: v.cpu() for k, v in model.state_dict().items()},
        "meta": dict(meta or {}),
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[UNet, dict]:
    path = Path(path)
    if not path.is_file():
        raise IncompatibleCheckpoint(f"checkpoint '{path}' does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise IncompatibleCheckpoint(f"cannot read checkpoint '{path}': {exc}") from exc
    if not isinstance(payload, dict) or "model_config" not in payload or "state_dict" not in payload:
        raise IncompatibleCheckpoint(f"'{path}' is not a model checkpoint")
    try:
        cfg = ModelConfig(**payload["model_config"])
        model = UNet(cfg)
        model.load_state_dict(payload["state_dict"])
    except (InvalidConfig, RuntimeError, TypeError) as exc:
        raise IncompatibleCheckpoint(f"checkpoint '{path}' does not match its config: {exc}") from exc
    model.eval()
    return model, payload.get("meta", {})
