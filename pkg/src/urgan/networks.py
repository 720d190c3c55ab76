"""Three-headed U-Net generator, CNN discriminator and checkpoint I/O."""

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import GGDParamMaps


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    base_width: int = 32
    depth: int = 2
    dropout_rate: float = 0.2
    # floor added to the 1/alpha head, so alpha <= 1 / alpha_floor
    alpha_floor: float = 1e-3
    beta_floor: float = 1e-2
    # initial head biases: alpha ~ 1/3 and beta ~ 2 start near a Gaussian on the
    # intensity scale; the 1/alpha head moves slowly, so a large bias pins alpha
    inv_alpha_bias: float = 3.0
    beta_bias: float = 2.0

    def __post_init__(self):
        if self.in_channels < 1 or self.in_channels % 2 == 0:
            raise ValueError("in_channels must be a positive odd number")
        if self.base_width < 1 or self.depth < 1:
            raise ValueError("base_width and depth must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.alpha_floor <= 0 or self.beta_floor <= 0:
            raise ValueError("floors must be > 0")


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    layer_widths: tuple = (64, 128, 256, 512)

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 3:
            raise ValueError("discriminator needs at least 3 conv stages")

    @property
    def min_size(self) -> int:
        return 2 ** len(self.layer_widths)


def _dropout(h, rate, active, generator):
    if not active or rate == 0.0:
        return h
    keep = torch.rand(h.shape, generator=generator, dtype=h.dtype, device=h.device) >= rate
    return h * keep / (1.0 - rate)


class _ConvBlock(nn.Sequential):
    def __init__(self, c_in, c_out, act):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.InstanceNorm2d(c_out, affine=True),
            act(),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.InstanceNorm2d(c_out, affine=True),
            act(),
        )


def _leaky():
    return nn.LeakyReLU(0.2)


class Generator(nn.Module):
    """U-Net trunk shared by three 1x1 heads: image, 1/alpha and beta.

    ``forward`` returns :class:`GGDParamMaps` with ``alpha_hat = 1 / (relu(r) + alpha_floor)``
    and ``beta_hat = relu(b) + beta_floor``. Dropout follows the two innermost
    decoder blocks; whether it fires is controlled per call so that MC passes
    can run with dropout on while the module is in eval mode.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        widths = [w * 2**i for i in range(cfg.depth + 1)]
        self.encoders = nn.ModuleList([_ConvBlock(cfg.in_channels, widths[0], _leaky)])
        for i in range(1, cfg.depth + 1):
            self.encoders.append(_ConvBlock(widths[i - 1], widths[i], _leaky))
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            self.ups.append(nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2))
            self.decoders.append(_ConvBlock(2 * widths[i], widths[i], nn.ReLU))
        self.head_x = nn.Conv2d(w, cfg.in_channels, 1)
        self.head_inv_alpha = nn.Conv2d(w, cfg.in_channels, 1)
        self.head_beta = nn.Conv2d(w, cfg.in_channels, 1)
        # positive biases keep the ReLU heads live at initialisation
        nn.init.constant_(self.head_inv_alpha.bias, cfg.inv_alpha_bias)
        nn.init.constant_(self.head_beta.bias, cfg.beta_bias)

    def check_input(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected N x {self.cfg.in_channels} x H x W input, got {tuple(x.shape)}")
        step = 2**self.cfg.depth
        if x.shape[-1] % step or x.shape[-2] % step:
            raise ValueError(f"H and W must be divisible by {step}, got {tuple(x.shape[-2:])}")

    def trunk(self, x, dropout_active=None, generator=None):
        if dropout_active is None:
            dropout_active = self.training
        skips = []
        h = x
        for i, enc in enumerate(self.encoders):
            if i > 0:
                h = F.max_pool2d(h, 2)
            h = enc(h)
            skips.append(h)
        h = skips.pop()
        # decoders run innermost first
        for i, (up, dec) in enumerate(zip(self.ups, self.decoders)):
            h = dec(torch.cat([up(h), skips.pop()], dim=1))
            if i < 2:
                h = _dropout(h, self.cfg.dropout_rate, dropout_active, generator)
        return h

    def forward(self, x, dropout_active=None, generator=None) -> GGDParamMaps:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        self.check_input(x)
        h = self.trunk(x, dropout_active, generator)
        x_hat = F.relu(self.head_x(h))
        alpha = 1.0 / (F.relu(self.head_inv_alpha(h)) + self.cfg.alpha_floor)
        beta = F.relu(self.head_beta(h)) + self.cfg.beta_floor
        if squeeze:
            x_hat, alpha, beta = x_hat[0], alpha[0], beta[0]
        return GGDParamMaps(x_hat, alpha, beta)


class Discriminator(nn.Module):
    """Strided CNN mapping an image to a per-image real/fake probability."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.layer_widths):
            layers.append(nn.Conv2d(c_in, c_out, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.LeakyReLU(0.2))
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(c_in, 1)

    def forward(self, x):
        if x.ndim == 3:
            x = x.unsqueeze(0)
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected N x {self.cfg.in_channels} x H x W input, got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.cfg.min_size:
            raise ValueError(f"input must be at least {self.cfg.min_size} pixels on each side")
        h = self.features(x).mean(dim=(2, 3))
        return torch.sigmoid(self.classifier(h)).squeeze(1)


def build_generator(cfg: GeneratorConfig) -> Generator:
    return Generator(cfg)


def build_discriminator(cfg: DiscriminatorConfig) -> Discriminator:
    return Discriminator(cfg)


@dataclass
class Checkpoint:
    """Weights, optimizer state and a manifest echoing the run configuration."""

    generator: dict
    discriminator: dict
    optimizer_g: dict = field(default_factory=dict)
    optimizer_d: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @classmethod
    def from_models(cls, gen: Generator, disc: Discriminator, opt_g=None, opt_d=None, **manifest):
        manifest.setdefault("generator_config", asdict(gen.cfg))
        manifest.setdefault("discriminator_config", asdict(disc.cfg))
        clone = lambda sd: {k: v.detach().clone() for k, v in sd.items()}
        return cls(
            generator=clone(gen.state_dict()),
            discriminator=clone(disc.state_dict()),
            optimizer_g=opt_g.state_dict() if opt_g is not None else {},
            optimizer_d=opt_d.state_dict() if opt_d is not None else {},
            manifest=manifest,
        )

    def build_models(self):
        gcfg = GeneratorConfig(**self.manifest["generator_config"])
        dcfg = DiscriminatorConfig(**self.manifest["discriminator_config"])
        gen, disc = build_generator(gcfg), build_discriminator(dcfg)
        gen.load_state_dict(self.generator)
        disc.load_state_dict(self.discriminator)
        return gen, disc


def save_checkpoint(ckpt: Checkpoint, path):
    """Write a single torch archive; weights keep their hierarchical state-dict names."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(ckpt.manifest)
    for key in ("generator_config", "discriminator_config"):
        if key in manifest:
            manifest[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in manifest[key].items()}
    torch.save(
        {
            "manifest": manifest,
            "generator": ckpt.generator,
            "discriminator": ckpt.discriminator,
            "optimizer_g": ckpt.optimizer_g,
            "optimizer_d": ckpt.optimizer_d,
        },
        path,
    )


def load_checkpoint(path) -> Checkpoint:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    return Checkpoint(**blob)
