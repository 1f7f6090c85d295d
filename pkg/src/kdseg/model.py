"""U-Net student: declarative spec, seeded construction, forward contract.

The network runs four (configurable) downsampling steps of paired 3x3
convolutions with 2x2 stride-2 max pooling, a mirrored upsampling path with
skip concatenation, and a 1x1 sigmoid head. Convs use same-padding, so skip
cropping is a no-op; inputs are zero-padded to a multiple of 2^depth and the
output is cropped back, keeping output spatial shape equal to input shape.
Dropout follows the layerwise schedule rising by 0.1 per level toward the
bottleneck and symmetrically falling on the way up.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import ImagePatch
from .errors import ConfigError, DimensionError

CHECKPOINT_FORMAT = "kdseg-checkpoint"
CHECKPOINT_VERSION = 1


def dropout_schedule(depth: int) -> list[float]:
    """Per-level dropout rates: [0.1, ..., 0.1*depth, 0.1*(depth+1), mirrored].

    One rate per conv block (2*depth + 1 of them), palindromic about the
    bottleneck. Rates above 0.9 are refused rather than clamped.
    """
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    peak = (depth + 1) / 10
    if peak > 0.9 + 1e-12:
        raise ConfigError(f"dropout schedule peaks at {peak} > 0.9 for depth {depth}")
    rising = [i / 10 for i in range(1, depth + 1)]
    return rising + [peak] + rising[::-1]


@dataclass
class UNetSpec:
    depth: int = 4
    base_channels: int = 16
    in_channels: int = 3
    out_channels: int = 1
    conv_kernel: int = 3
    pool_kernel: int = 2
    dropout_rates: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.out_channels != 1:
            raise ConfigError("only a single-channel head is supported")
        if not self.dropout_rates:
            self.dropout_rates = dropout_schedule(self.depth)
        if len(self.dropout_rates) != 2 * self.depth + 1:
            raise ConfigError(
                f"need {2 * self.depth + 1} dropout rates, got {len(self.dropout_rates)}"
            )

    @property
    def conv3x3_count(self) -> int:
        return 2 * (2 * self.depth + 1)


class _ConvBlock(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 -> ReLU -> dropout, same-padding."""

    def __init__(self, c_in: int, c_out: int, dropout_rate: float):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, kernel_size=3, padding=1)
        self.drop = nn.Dropout(dropout_rate)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        return self.drop(x)


class _UNet(nn.Module):
    def __init__(self, spec: UNetSpec):
        super().__init__()
        rates = spec.dropout_rates
        widths = [spec.base_channels * 2**d for d in range(spec.depth + 1)]

        self.encoders = nn.ModuleList()
        c_in = spec.in_channels
        for d in range(spec.depth):
            self.encoders.append(_ConvBlock(c_in, widths[d], rates[d]))
            c_in = widths[d]
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)
        self.bottleneck = _ConvBlock(widths[spec.depth - 1], widths[spec.depth], rates[spec.depth])
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.decoders = nn.ModuleList()
        for d in reversed(range(spec.depth)):
            # input: upsampled deeper features concatenated with the skip
            self.decoders.append(
                _ConvBlock(widths[d + 1] + widths[d], widths[d], rates[2 * spec.depth - d])
            )
        self.head = nn.Conv2d(widths[0], spec.out_channels, kernel_size=1)

    def forward(self, x):
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for decoder, skip in zip(self.decoders, reversed(skips)):
            x = self.upsample(x)
            x = torch.cat([x, skip], dim=1)
            x = decoder(x)
        return torch.sigmoid(self.head(x))


@dataclass
class StudentModel:
    spec: UNetSpec
    net: _UNet
    training_mode: bool = False

    def set_training(self, flag: bool) -> None:
        self.training_mode = flag
        self.net.train(flag)

    def forward_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """N x C x H x W float tensor -> N x 1 x H x W probabilities.

        Pads H and W up to the next multiple of 2^depth with zeros and crops
        the output back, so any H, W >= 8 round-trips shape-exactly.
        """
        if x.ndim != 4:
            raise DimensionError(f"expected N x C x H x W, got shape {tuple(x.shape)}")
        if x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"model expects {self.spec.in_channels} channels, got {x.shape[1]}"
            )
        height, width = x.shape[2], x.shape[3]
        multiple = 2**self.spec.depth
        pad_h = (-height) % multiple
        pad_w = (-width) % multiple
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h))
        out = self.net(x)
        return out[:, :, :height, :width]


def build_student(spec: UNetSpec, seed: int) -> StudentModel:
    """Construct a student with seeded random weights and zero biases."""
    torch.manual_seed(seed)
    net = _UNet(spec)
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name.endswith(".bias"):
                param.zero_()
    model = StudentModel(spec=spec, net=net)
    model.set_training(False)
    return model


def _batch_to_tensor(batch, in_channels: int) -> torch.Tensor:
    if isinstance(batch, list):
        if not batch:
            raise DimensionError("empty batch")
        shapes = {p.pixels.shape for p in batch}
        if len(shapes) > 1:
            raise DimensionError(f"patches in one batch must share a shape, got {shapes}")
        batch = np.stack([p.pixels for p in batch])
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim == 3:
        batch = batch[:, :, :, None]
    if batch.ndim != 4:
        raise DimensionError(f"expected N x H x W x C, got shape {batch.shape}")
    if batch.shape[3] != in_channels:
        raise DimensionError(f"model expects {in_channels} channels, got {batch.shape[3]}")
    return torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous()


def forward(model: StudentModel, batch) -> np.ndarray:
    """Run inference on a stack of patches.

    ``batch`` is a list of ImagePatch or an N x H x W x C array in [0, 1];
    returns N x H x W float32 probabilities. Dropout is active only when the
    model was put in training mode.
    """
    x = _batch_to_tensor(batch, model.spec.in_channels)
    with torch.no_grad():
        probs = model.forward_tensor(x)
    return probs[:, 0].numpy().astype(np.float32)


def predict_patch(model: StudentModel, patch: ImagePatch) -> np.ndarray:
    """Single-patch convenience wrapper around :func:`forward`."""
    return forward(model, [patch])[0]


def count_convs(model: StudentModel) -> tuple[int, int]:
    """(number of 3x3 convs, number of 1x1 convs) by walking the module tree."""
    n3 = n1 = 0
    for module in model.net.modules():
        if isinstance(module, nn.Conv2d):
            if module.kernel_size == (3, 3):
                n3 += 1
            elif module.kernel_size == (1, 1):
                n1 += 1
    return n3, n1


def save_checkpoint(
    model: StudentModel,
    path,
    optimizer_state: dict | None = None,
    epoch: int | None = None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "state_dict": model.net.state_dict(),
        "optimizer_state": optimizer_state,
        "epoch": epoch,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[StudentModel, dict | None, int | None]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a student checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    spec = UNetSpec(**payload["spec"])
    net = _UNet(spec)
    net.load_state_dict(payload["state_dict"])
    model = StudentModel(spec=spec, net=net)
    model.set_training(False)
    return model, payload["optimizer_state"], payload["epoch"]
