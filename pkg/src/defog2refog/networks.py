"""Defog-Net, Refog-Net, E-Net and the patch discriminators.

Every network is built from a frozen, declarative layer table
(:data:`ARCHITECTURES`); the table is hashed into checkpoints so weights
from a different architecture are refused at load time. Images entering and
leaving the networks are NCHW tensors in the signed range ``[-1, 1]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import fogmodel

NETWORK_KINDS = ("defog", "refog_t", "enhancer", "discriminator")
UPSAMPLE_MODES = ("deconv", "nearest")
INIT_STD = 0.02


class ContractError(ValueError):
    """An input violates a network's shape contract."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    op: str  # "conv" or "up" (x2 upsampling conv)
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    norm: bool
    act: str  # relu | lrelu | tanh | sigmoid | none


def _defog_table() -> tuple[LayerSpec, ...]:
    layers = [
        LayerSpec("enc1", "conv", 3, 32, 7, 1, True, "relu"),
        LayerSpec("enc2", "conv", 32, 64, 3, 2, True, "relu"),
        LayerSpec("enc3", "conv", 64, 128, 3, 2, True, "relu"),
    ]
    for i in range(9):
        layers.append(LayerSpec(f"res{i}a", "conv", 128, 128, 3, 1, True, "relu"))
        layers.append(LayerSpec(f"res{i}b", "conv", 128, 128, 3, 1, True, "none"))
    layers += [
        LayerSpec("dec1", "up", 128, 64, 3, 2, True, "relu"),
        LayerSpec("dec2", "up", 64, 32, 3, 2, True, "relu"),
        LayerSpec("out", "conv", 32, 3, 7, 1, False, "tanh"),
    ]
    return tuple(layers)


ARCHITECTURES: dict[str, tuple[LayerSpec, ...]] = {
    "defog": _defog_table(),
    "refog_t": (
        LayerSpec("t1", "conv", 3, 64, 3, 1, True, "relu"),
        LayerSpec("t2", "conv", 64, 64, 3, 1, True, "relu"),
        LayerSpec("t3", "conv", 64, 64, 3, 1, True, "relu"),
        LayerSpec("t4", "conv", 64, 64, 3, 1, True, "relu"),
        LayerSpec("t_out", "conv", 64, 1, 3, 1, False, "sigmoid"),
    ),
    "enhancer": (
        LayerSpec("enc1", "conv", 3, 64, 3, 2, True, "relu"),
        LayerSpec("enc2", "conv", 64, 64, 3, 2, True, "relu"),
        LayerSpec("enc3", "conv", 64, 64, 3, 2, True, "relu"),
        LayerSpec("dec1", "up", 64, 64, 3, 2, True, "relu"),
        LayerSpec("dec2", "up", 64, 64, 3, 2, True, "relu"),
        LayerSpec("dec3", "up", 64, 64, 3, 2, True, "relu"),
        LayerSpec("fuse", "conv", 128, 64, 1, 1, True, "relu"),
        LayerSpec("out", "conv", 64, 3, 3, 1, False, "tanh"),
    ),
    "discriminator": (
        LayerSpec("b1", "conv", 3, 64, 4, 2, True, "lrelu"),
        LayerSpec("b2", "conv", 64, 128, 4, 2, True, "lrelu"),
        LayerSpec("b3", "conv", 128, 256, 4, 2, True, "lrelu"),
        LayerSpec("b4", "conv", 256, 512, 4, 2, True, "lrelu"),
        LayerSpec("b5", "conv", 512, 1, 4, 2, False, "none"),
    ),
}

_ARCH_REVISION = "1"


def spec_hash(kind: str, upsample: str = "deconv") -> str:
    payload = repr((_ARCH_REVISION, kind, upsample, ARCHITECTURES[kind]))
    return hashlib.sha256(payload.encode()).hexdigest()


def weight_shape(spec: LayerSpec, upsample: str = "deconv") -> tuple[int, ...]:
    if spec.op == "up" and upsample == "deconv":
        return (spec.in_ch, spec.out_ch, spec.kernel, spec.kernel)
    return (spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)


class _Layer(nn.Module):
    def __init__(self, spec: LayerSpec, upsample: str):
        super().__init__()
        self.spec = spec
        k = spec.kernel
        if spec.op == "up":
            if upsample == "deconv":
                self.conv = nn.ConvTranspose2d(spec.in_ch, spec.out_ch, k, stride=2, padding=k // 2, output_padding=1)
            else:
                self.conv = nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(spec.in_ch, spec.out_ch, k, padding=k // 2),
                )
        elif spec.kernel % 2 == 0:
            # even kernels are padded explicitly by the caller
            self.conv = nn.Conv2d(spec.in_ch, spec.out_ch, k, stride=spec.stride)
        else:
            mode = "reflect" if k >= 7 else "zeros"
            self.conv = nn.Conv2d(spec.in_ch, spec.out_ch, k, stride=spec.stride, padding=k // 2, padding_mode=mode)
        self.norm = nn.InstanceNorm2d(spec.out_ch) if spec.norm else nn.Identity()
        self.act = {
            "relu": nn.ReLU(),
            "lrelu": nn.LeakyReLU(0.2),
            "tanh": nn.Tanh(),
            "sigmoid": nn.Sigmoid(),
            "none": nn.Identity(),
        }[spec.act]

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class _Network(nn.Module):
    kind: str

    def __init__(self, seed: int, upsample: str = "deconv"):
        super().__init__()
        if upsample not in UPSAMPLE_MODES:
            raise ValueError(f"upsample must be one of {UPSAMPLE_MODES}")
        self.seed = int(seed)
        self.upsample = upsample
        self.layers = nn.ModuleDict({s.name: _Layer(s, upsample) for s in ARCHITECTURES[self.kind]})
        self._init_weights()

    def _init_weights(self) -> None:
        gen = torch.Generator().manual_seed(self.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                else:
                    nn.init.trunc_normal_(p, 0.0, INIT_STD, -2 * INIT_STD, 2 * INIT_STD, generator=gen)

    @property
    def spec_hash(self) -> str:
        return spec_hash(self.kind, self.upsample)

    def _check_divisible(self, x: torch.Tensor, factor: int) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"{self.kind} expects N x 3 x H x W, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % factor or w % factor:
            raise ContractError(f"{self.kind} needs H, W divisible by {factor}, got {h}x{w}")
        # instance norm needs more than one element at the coarsest stage
        if factor > 1 and (h < 2 * factor or w < 2 * factor):
            raise ContractError(f"{self.kind} needs H, W >= {2 * factor}, got {h}x{w}")


class DefogNet(_Network):
    """Encoder (stride 1, 2, 2), nine residual blocks, mirrored decoder, tanh output."""

    kind = "defog"

    def forward(self, x):
        self._check_divisible(x, 4)
        L = self.layers
        h = L["enc3"](L["enc2"](L["enc1"](x)))
        for i in range(9):
            h = h + L[f"res{i}b"](L[f"res{i}a"](h))
        return L["out"](L["dec2"](L["dec1"](h)))


class TransmissionNet(_Network):
    """Five stride-1 convolutions ending in a one-channel sigmoid map."""

    kind = "refog_t"

    def forward(self, x):
        self._check_divisible(x, 1)
        h = x
        for name in ("t1", "t2", "t3", "t4", "t_out"):
            h = self.layers[name](h)
        return h.clamp_min(fogmodel.T_MIN)


class RefogNet(nn.Module):
    """Transmission CNN composed with the scattering model.

    ``forward(clear, airlight)`` takes a signed clear image and an ``N x 3``
    airlight in ``[0, 1]`` and returns the signed foggy image together with
    the ``N x H x W`` transmission it used.
    """

    kind = "refog_t"

    def __init__(self, seed: int, upsample: str = "deconv"):
        super().__init__()
        self.t_net = TransmissionNet(seed, upsample)

    @property
    def seed(self) -> int:
        return self.t_net.seed

    @property
    def upsample(self) -> str:
        return self.t_net.upsample

    @property
    def spec_hash(self) -> str:
        return self.t_net.spec_hash

    def forward(self, clear, airlight=None):
        if airlight is None:
            airlight, _ = estimate_batch_airlight(clear)
        t = self.t_net(clear)
        j = (clear + 1.0) / 2.0
        a = airlight.to(clear.dtype).reshape(-1, 3, 1, 1)
        foggy = fogmodel.synthesize_fog(j, t, a, channel_axis=1)
        return foggy * 2.0 - 1.0, t[:, 0]


class Enhancer(_Network):
    """E-Net: three stride-2 encoder blocks, skip-summed upsampling decoder,
    concat + 1x1 fusion, and a multiplicative gate from the first encoder block."""

    kind = "enhancer"

    def forward(self, x):
        self._check_divisible(x, 8)
        L = self.layers
        e1 = L["enc1"](x)
        e2 = L["enc2"](e1)
        e3 = L["enc3"](e2)
        d = L["dec1"](e3) + e2
        d = L["dec2"](d) + e1
        d = L["dec3"](d)
        e1_full = F.interpolate(e1, scale_factor=2, mode="bilinear", align_corners=False)
        fused = L["fuse"](torch.cat([d, e1_full], dim=1))
        return L["out"](e1_full * fused)


class Discriminator(_Network):
    """Five 4x4 stride-2 blocks; emits a ceil(H/32) x ceil(W/32) score map."""

    kind = "discriminator"
    min_size = 32

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"discriminator expects N x 3 x H x W, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h < self.min_size or w < self.min_size:
            raise ContractError(f"discriminator needs H, W >= {self.min_size}, got {h}x{w}")
        for name in ("b1", "b2", "b3", "b4", "b5"):
            h, w = x.shape[-2:]
            # asymmetric padding makes each stage exactly ceil(size / 2)
            x = self.layers[name](F.pad(x, (1, 1 + w % 2, 1, 1 + h % 2)))
        return x


_CONSTRUCTORS = {
    "defog": DefogNet,
    "refog_t": RefogNet,
    "enhancer": Enhancer,
    "discriminator": Discriminator,
}


def init_params(kind: str, seed: int, upsample: str = "deconv") -> nn.Module:
    """Deterministically initialised network of the given kind.

    Weights are N(0, 0.02) truncated at two standard deviations, biases zero.
    """
    if kind not in _CONSTRUCTORS:
        raise ValueError(f"unknown network kind {kind!r}; expected one of {NETWORK_KINDS}")
    return _CONSTRUCTORS[kind](seed, upsample)


def defog_forward(params: DefogNet, foggy: torch.Tensor) -> torch.Tensor:
    return params(foggy)


def refog_forward(params: RefogNet, clear: torch.Tensor, airlight: torch.Tensor | None = None):
    return params(clear, airlight)


def enhancer_forward(params: Enhancer, image: torch.Tensor) -> torch.Tensor:
    return params(image)


def discriminator_forward(params: Discriminator, image: torch.Tensor) -> torch.Tensor:
    return params(image)


def signed_to_unit_hwc(batch: torch.Tensor) -> np.ndarray:
    """``N x 3 x H x W`` signed tensor to ``N x H x W x 3`` unit numpy array."""
    arr = batch.detach().to("cpu", torch.float64).numpy()
    return np.clip((arr.transpose(0, 2, 3, 1) + 1.0) / 2.0, 0.0, 1.0)


def unit_hwc_to_signed(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2) * 2.0 - 1.0)).to(dtype)


def estimate_batch_airlight(images: torch.Tensor, scalar: bool = False) -> tuple[torch.Tensor, list[str]]:
    """Per-sample airlight of signed images (sky prior, dark-channel fallback).

    The estimate carries no gradient. Returns an ``N x 3`` tensor and the
    estimator used for each sample.
    """
    airlights, sources = [], []
    for img in signed_to_unit_hwc(images):
        a, source = fogmodel.estimate_airlight(img, scalar=scalar)
        airlights.append(a)
        sources.append(source)
    return torch.tensor(np.stack(airlights), dtype=images.dtype, device=images.device), sources


def layer_shapes(net: nn.Module, size: int = 64) -> dict[str, tuple[tuple[int, ...], tuple[int, ...]]]:
    """Trace a ``1 x 3 x size x size`` input; map layer name to (weight shape, output shape)."""
    shapes: dict[str, tuple[tuple[int, ...], tuple[int, ...]]] = {}
    hooks = []
    layers = net.t_net.layers if isinstance(net, RefogNet) else net.layers
    for name, layer in layers.items():
        conv = layer.conv if isinstance(layer.conv, nn.Conv2d | nn.ConvTranspose2d) else layer.conv[1]
        wshape = tuple(conv.weight.shape)

        def hook(_mod, _inp, out, name=name, wshape=wshape):
            shapes[name] = (wshape, tuple(out.shape[1:]))

        hooks.append(layer.register_forward_hook(hook))
    try:
        x = torch.zeros(1, 3, size, size, dtype=next(net.parameters()).dtype)
        with torch.no_grad():
            if isinstance(net, RefogNet):
                net(x, torch.ones(1, 3, dtype=x.dtype))
            else:
                net(x)
    finally:
        for h in hooks:
            h.remove()
    return shapes


def shape_audit(net: nn.Module, expected: dict[str, tuple[tuple[int, ...], tuple[int, ...]]], size: int = 64) -> list[str]:
    """Differences between traced layer shapes and an expected table (empty when they agree)."""
    actual = layer_shapes(net, size)
    problems = []
    for name in sorted(set(actual) | set(expected)):
        if actual.get(name) != expected.get(name):
            problems.append(f"{name}: expected {expected.get(name)}, got {actual.get(name)}")
    return problems
