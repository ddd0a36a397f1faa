"""Encoder-decoder segmentation network with configurable attention sites.

A 4-level U-Net (plus bottleneck) with instance normalization, Xavier
initialization and softmax output.  Channel-attention (SE) sites are
numbered 1-4 after the encoder stages, 5 at the bottleneck and 6-9 after
the decoder stages in execution order (deep to shallow).  Spatial-attention
(AG) sites 1-4 sit on the skip connections, numbered from the
highest-resolution skip; each gate is driven by the next-coarser decoder
feature before it is upsampled.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from .attention import AttentionGate, SEBlock
from .errors import InvalidPlacement, ShapeMismatch

DEPTH = 4  # encoder levels; the spatial extent shrinks by 2**DEPTH

_FOCAL_INITS = {"off": None, "init0": 0.0, "init1": 1.0}
_POSITIONS = {"SE": range(1, 10), "AG": range(1, 5)}


@dataclass(frozen=True, order=True)
class AttentionPlacement:
    """One attention site: kind (SE or AG), position index, focal mode."""

    kind: str
    position: int
    focal: str = "off"

    def __post_init__(self):
        if self.kind not in _POSITIONS:
            raise InvalidPlacement(f"kind must be SE or AG, got {self.kind!r}")
        if self.position not in _POSITIONS[self.kind]:
            raise InvalidPlacement(
                f"{self.kind} position must be in "
                f"{_POSITIONS[self.kind].start}..{_POSITIONS[self.kind].stop - 1}, "
                f"got {self.position}")
        if self.focal not in _FOCAL_INITS:
            raise InvalidPlacement(f"focal must be off/init0/init1, got {self.focal!r}")

    @property
    def key(self) -> str:
        return f"{self.kind}{self.position}"

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "position": self.position, "focal": self.focal}

    @classmethod
    def from_json_dict(cls, d: dict) -> "AttentionPlacement":
        return cls(kind=d["kind"], position=int(d["position"]),
                   focal=d.get("focal", "off"))


def all_se_placements(focal: str = "off") -> tuple[AttentionPlacement, ...]:
    return tuple(AttentionPlacement("SE", p, focal) for p in range(1, 10))


def all_ag_placements(focal: str = "off") -> tuple[AttentionPlacement, ...]:
    return tuple(AttentionPlacement("AG", p, focal) for p in range(1, 5))


@dataclass(frozen=True)
class NetworkConfig:
    """Everything needed to rebuild a network deterministically."""

    in_channels: int = 3
    classes: int = 2
    base_channels: int = 32
    se_reduction: int = 8
    placements: tuple[AttentionPlacement, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        object.__setattr__(self, "placements", tuple(self.placements))
        seen = set()
        for p in self.placements:
            site = (p.kind, p.position)
            if site in seen:
                raise InvalidPlacement(f"duplicate placement at {p.key}")
            seen.add(site)

    def to_json_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "classes": self.classes,
            "base_channels": self.base_channels,
            "se_reduction": self.se_reduction,
            "placements": [p.to_json_dict() for p in sorted(self.placements)],
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            in_channels=int(d.get("in_channels", 3)),
            classes=int(d.get("classes", 2)),
            base_channels=int(d.get("base_channels", 32)),
            se_reduction=int(d.get("se_reduction", 8)),
            placements=tuple(AttentionPlacement.from_json_dict(p)
                             for p in d.get("placements", [])),
            seed=int(d.get("seed", 0)),
        )


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Segmentation U-Net; forward returns per-class softmax probabilities."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        b = config.base_channels
        enc_ch = [b, 2 * b, 4 * b, 8 * b]
        self.pool = nn.MaxPool2d(2)
        self.encoders = nn.ModuleList()
        c_in = config.in_channels
        for c in enc_ch:
            self.encoders.append(_conv_block(c_in, c))
            c_in = c
        self.bottleneck = _conv_block(enc_ch[-1], 16 * b)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        c_prev = 16 * b
        for c in reversed(enc_ch):  # deep to shallow
            self.upsamplers.append(nn.ConvTranspose2d(c_prev, c, 2, stride=2))
            self.decoders.append(_conv_block(2 * c, c))
            c_prev = c
        self.head = nn.Conv2d(b, config.classes, 1)

        self.attn = nn.ModuleDict()
        dec_ch = list(reversed(enc_ch))  # channels of decoder stages 6..9
        for p in config.placements:
            init = _FOCAL_INITS[p.focal]
            if p.kind == "SE":
                if p.position <= 4:
                    ch = enc_ch[p.position - 1]
                elif p.position == 5:
                    ch = 16 * b
                else:
                    ch = dec_ch[p.position - 6]
                self.attn[p.key] = SEBlock(ch, config.se_reduction, focal_init=init)
            else:
                x_ch = enc_ch[p.position - 1]
                g_ch = 16 * b if p.position == 4 else enc_ch[p.position]
                self.attn[p.key] = AttentionGate(x_ch, g_ch, focal_init=init)

    def _se(self, position: int, x: torch.Tensor) -> torch.Tensor:
        key = f"SE{position}"
        if key not in self.attn:
            return x
        return self.attn[key](x)[0]

    def _gate(self, position: int, skip: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        key = f"AG{position}"
        if key not in self.attn:
            return skip
        return self.attn[key](skip, g)[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ShapeMismatch(f"expected (B, C, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[2:]
        if h % (1 << DEPTH) or w % (1 << DEPTH):
            raise ShapeMismatch(
                f"input spatial dims must be divisible by {1 << DEPTH}, got {h}x{w}")
        skips = []
        z = x
        for i, enc in enumerate(self.encoders):
            z = enc(z if i == 0 else self.pool(z))
            z = self._se(i + 1, z)
            skips.append(z)
        z = self.bottleneck(self.pool(z))
        z = self._se(5, z)
        for i, (up, dec) in enumerate(zip(self.upsamplers, self.decoders)):
            skip_pos = DEPTH - i  # 4, 3, 2, 1
            gated = self._gate(skip_pos, skips[skip_pos - 1], z)
            z = dec(torch.cat([gated, up(z)], dim=1))
            z = self._se(6 + i, z)
        return torch.softmax(self.head(z), dim=1)

    def focal_params(self) -> dict[str, nn.Parameter]:
        """Trainable focal weight per placement key, for tracing/selection."""
        out = {}
        for p in sorted(self.config.placements):
            if p.focal != "off":
                out[p.key] = self.attn[p.key].focal.weight
        return out

    def focal_values(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in self.focal_params().items()}


def _init_weights(model: nn.Module) -> None:
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build_unet(config: NetworkConfig) -> UNet:
    """Deterministically build and Xavier-initialize a network.

    The same (config, seed) always yields bit-identical parameters; focal
    layers keep their configured init (0 or 1) rather than a random draw.
    """
    torch.manual_seed(config.seed)
    model = UNet(config)
    _init_weights(model)
    # re-pin focal weights: xavier init above only touches conv/linear/norm,
    # but be explicit that focal inits survive whole-model initialization
    for p in config.placements:
        if p.focal != "off":
            with torch.no_grad():
                model.attn[p.key].focal.weight.fill_(_FOCAL_INITS[p.focal])
    return model


def prune_placements(model: UNet, keep) -> UNet:
    """Rebuild the network with only ``keep`` attention sites, copying over
    every surviving weight (convolutions, norms, and the kept modules)."""
    keep = tuple(keep)
    current = set(model.config.placements)
    for p in keep:
        if p not in current:
            raise InvalidPlacement(f"cannot keep {p.key}: not present in the model")
    new_config = replace(model.config, placements=tuple(sorted(keep)))
    new_model = build_unet(new_config)
    new_state = new_model.state_dict()
    old_state = model.state_dict()
    for name, value in old_state.items():
        if name in new_state and new_state[name].shape == value.shape:
            new_state[name] = value.clone()
    new_model.load_state_dict(new_state)
    return new_model


def save_checkpoint(model: UNet, path) -> None:
    """Single-file archive: config as JSON plus named parameter arrays."""
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(model.config.to_json_dict(),
                                              indent=2, sort_keys=True))
        zf.writestr("params.npz", buf.getvalue())


def load_checkpoint(path) -> UNet:
    """Restore a network with bit-identical forward behavior."""
    with zipfile.ZipFile(path, "r") as zf:
        config = NetworkConfig.from_json_dict(json.loads(zf.read("config.json")))
        arrays = np.load(io.BytesIO(zf.read("params.npz")))
        model = build_unet(config)
        state = {name: torch.from_numpy(arrays[name]) for name in arrays.files}
        model.load_state_dict(state)
    return model
