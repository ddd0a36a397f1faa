"""Channel and spatial attention modules with an optional focal exponent.

The focal layer raises post-sigmoid attention coefficients elementwise to a
single trainable scalar, inserted between coefficient generation and
recalibration.  At weight 1 the module behaves exactly like its plain
counterpart; at weight 0 the coefficients collapse to 1 and the module is a
no-op, which is what makes near-zero weights a usable prune signal.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch

# Coefficients are clipped away from 0 before exponentiation so negative
# focal weights cannot produce 0^negative.
COEFF_FLOOR = 1e-6


class FocalLayer(nn.Module):
    """Elementwise power a^f of attention coefficients, f trainable."""

    def __init__(self, init: float):
        super().__init__()
        if not math.isfinite(init):
            raise ValueError(f"focal init must be finite, got {init!r}")
        self.init = float(init)
        self.weight = nn.Parameter(torch.tensor(float(init)))

    def forward(self, coeffs: torch.Tensor) -> torch.Tensor:
        return coeffs.clamp(COEFF_FLOOR, 1.0) ** self.weight

    def extra_repr(self) -> str:
        return f"init={self.init}"


class SEBlock(nn.Module):
    """Squeeze-and-excitation channel attention.

    Global average pool over space, a two-layer bottleneck (width
    max(1, C // reduction)) with ReLU then sigmoid, and channelwise
    recalibration of the input.  ``focal_init`` inserts a FocalLayer on
    the excitation coefficients; None leaves the block plain.
    """

    def __init__(self, channels: int, reduction: int = 8,
                 focal_init: float | None = None):
        super().__init__()
        self.channels = channels
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.focal = FocalLayer(focal_init) if focal_init is not None else None

    def forward(self, x: torch.Tensor):
        squeeze_batch = x.dim() == 3
        if squeeze_batch:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(
                f"expected (B, {self.channels}, H, W) input, got {tuple(x.shape)}")
        pooled = x.mean(dim=(2, 3))
        coeffs = torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))
        if self.focal is not None:
            coeffs = self.focal(coeffs)
        out = x * coeffs[:, :, None, None]
        if squeeze_batch:
            return out.squeeze(0), coeffs.squeeze(0)
        return out, coeffs


class AttentionGate(nn.Module):
    """Additive spatial attention gating a skip connection.

    The skip ``x`` is projected (1x1 conv, strided to match the coarser
    gating signal ``g``), summed with the projected gate, passed through
    ReLU, a 1x1 projection and sigmoid.  The focal layer (if any) applies
    to the coarse coefficients, which are then upsampled bilinearly to
    x's resolution and multiplied in.  Returns the gated skip and the
    upsampled coefficient map.
    """

    def __init__(self, x_channels: int, g_channels: int,
                 inter_channels: int | None = None,
                 focal_init: float | None = None):
        super().__init__()
        self.x_channels = x_channels
        self.g_channels = g_channels
        inter = inter_channels if inter_channels is not None else max(1, x_channels // 2)
        self.theta = nn.Conv2d(x_channels, inter, kernel_size=1)
        self.phi = nn.Conv2d(g_channels, inter, kernel_size=1)
        self.psi = nn.Conv2d(inter, 1, kernel_size=1)
        self.focal = FocalLayer(focal_init) if focal_init is not None else None

    def forward(self, x: torch.Tensor, g: torch.Tensor):
        squeeze_batch = x.dim() == 3
        if squeeze_batch:
            x, g = x.unsqueeze(0), g.unsqueeze(0)
        if x.shape[1] != self.x_channels or g.shape[1] != self.g_channels:
            raise ShapeMismatch(
                f"expected {self.x_channels}/{self.g_channels} channels, "
                f"got x={tuple(x.shape)} g={tuple(g.shape)}")
        (hx, wx), (hg, wg) = x.shape[2:], g.shape[2:]
        if hx % hg or wx % wg or hx // hg != wx // wg:
            raise ShapeMismatch(
                f"gate spatial dims {hg}x{wg} must evenly divide skip {hx}x{wx}")
        stride = hx // hg
        x_proj = F.conv2d(x, self.theta.weight, self.theta.bias, stride=stride)
        a = torch.sigmoid(self.psi(F.relu(x_proj + self.phi(g))))
        if self.focal is not None:
            a = self.focal(a)
        if stride > 1:
            a = F.interpolate(a, size=(hx, wx), mode="bilinear", align_corners=False)
        out = x * a
        if squeeze_batch:
            return out.squeeze(0), a.squeeze(0)
        return out, a


def focal_layer(coeffs: torch.Tensor, weight: float) -> torch.Tensor:
    """Functional form of the focal exponentiation for a fixed weight."""
    if not math.isfinite(weight):
        raise ValueError(f"focal weight must be finite, got {weight!r}")
    return coeffs.clamp(COEFF_FLOOR, 1.0) ** weight
