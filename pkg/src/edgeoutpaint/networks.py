"""Generators, patch discriminators and the semantic embedding extractor.

All modules take NCHW float tensors. Generators follow an encoder / dilated
residual / decoder layout; discriminators are spectrally normalized patch
critics that also expose their intermediate activations.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import spectral_norm

from .errors import ConfigError, ShapeError

EMBEDDING_DIM = 512
STAGES = ("edge", "inpaint", "joint")


@dataclass
class GeneratorConfig:
    base_channels: int = 16
    residual_blocks: int = 4
    dilation: int = 2
    input_channels: int = 3
    output_channels: int = 1

    def __post_init__(self):
        if self.base_channels < 8 or self.residual_blocks < 1 or self.dilation < 1:
            raise ConfigError(f"invalid generator config {self}")


@dataclass
class DiscriminatorConfig:
    layers: int = 4
    base_channels: int = 32
    spectral_norm: bool = True
    input_channels: int = 3

    def __post_init__(self):
        if self.layers < 3:
            raise ConfigError(f"discriminator needs at least 3 layers, got {self.layers}")


@dataclass
class EmbedderConfig:
    conv_stage_channels: tuple = (64, 128, 256, 512)
    input_size: int = 64
    embedding_dim: int = EMBEDDING_DIM
    seed: int = 1234

    def __post_init__(self):
        self.conv_stage_channels = tuple(int(c) for c in self.conv_stage_channels)
        if self.embedding_dim != EMBEDDING_DIM:
            raise ConfigError(f"embedding_dim is fixed at {EMBEDDING_DIM}")
        if not self.conv_stage_channels:
            raise ConfigError("embedder needs at least one conv stage")


def _norm(channels):
    # running statistics make eval-mode generators strictly local operators
    return nn.InstanceNorm2d(channels, affine=True, track_running_stats=True)


class ResidualBlock(nn.Module):
    def __init__(self, channels, dilation):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(dilation),
            nn.Conv2d(channels, channels, 3, dilation=dilation),
            _norm(channels),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder (two stride-2 convs), dilated residual trunk, decoder, sigmoid head."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        c = config.base_channels
        self.encoder = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(config.input_channels, c, 7),
            _norm(c),
            nn.ReLU(True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            _norm(2 * c),
            nn.ReLU(True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            _norm(4 * c),
            nn.ReLU(True),
        )
        self.middle = nn.Sequential(*[ResidualBlock(4 * c, config.dilation)
                                      for _ in range(config.residual_blocks)])
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1),
            _norm(2 * c),
            nn.ReLU(True),
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1),
            _norm(c),
            nn.ReLU(True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(c, config.output_channels, 7),
        )

    def forward(self, x):
        h, w = x.shape[-2:]
        if x.shape[1] != self.config.input_channels:
            raise ShapeError(f"expected {self.config.input_channels} input channels, got {x.shape[1]}")
        if h % 4 or w % 4:
            raise ShapeError(f"spatial size {h}x{w} must be divisible by 4")
        return torch.sigmoid(self.decoder(self.middle(self.encoder(x))))


def receptive_field_radius(config):
    """Upper bound on how far (in input pixels) one output pixel can see.

    Valid in eval mode, where normalization uses running statistics.
    Each layer contributes its one-sided kernel extent times its input stride.
    """
    r = 3                                                  # 7x7 stem
    r += 2 * 1 + 2 * 2                                     # stride-2 encoder convs
    r += 4 * (config.dilation + 1) * config.residual_blocks
    r += 2 * 4 + 2 * 2                                     # transposed convs
    r += 3                                                 # 7x7 head
    return r + 4                                           # grid alignment slack


class EdgeGenerator(Generator):
    def __init__(self, config=None):
        config = config or GeneratorConfig(input_channels=3, output_channels=1)
        super().__init__(config)

    def forward(self, masked_gray, masked_edges, mask):
        _check_same(masked_gray, masked_edges, mask)
        return super().forward(torch.cat([masked_gray, masked_edges, mask], dim=1))


class InpaintGenerator(Generator):
    def __init__(self, config=None):
        config = config or GeneratorConfig(input_channels=5, output_channels=3)
        super().__init__(config)

    def forward(self, masked_image, edge_prior, mask):
        _check_same(masked_image, edge_prior, mask)
        return super().forward(torch.cat([masked_image, edge_prior, mask], dim=1))


def _check_same(*tensors):
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0] or t.shape[-2:] != ref[-2:]:
            raise ShapeError(f"batch/spatial shapes differ: {tuple(ref)} vs {tuple(t.shape)}")


class PatchDiscriminator(nn.Module):
    """Patch critic; returns (score logits, activations of all but the last layer)."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        wrap = spectral_norm if config.spectral_norm else (lambda m: m)
        chans = [config.input_channels] + [config.base_channels * 2 ** min(i, 3)
                                           for i in range(config.layers - 1)]
        blocks = []
        for i in range(config.layers - 1):
            stride = 2 if i < 2 else 1
            blocks.append(nn.Sequential(
                wrap(nn.Conv2d(chans[i], chans[i + 1], 4, stride=stride, padding=1,
                               bias=not config.spectral_norm)),
                nn.LeakyReLU(0.2, True),
            ))
        blocks.append(nn.Sequential(wrap(nn.Conv2d(chans[-1], 1, 4, stride=1, padding=1,
                                                   bias=not config.spectral_norm))))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        if x.shape[1] != self.config.input_channels:
            raise ShapeError(f"expected {self.config.input_channels} input channels, got {x.shape[1]}")
        feats = []
        for block in self.blocks[:-1]:
            x = block(x)
            feats.append(x)
        return self.blocks[-1](x), feats


class SemanticEmbedder(nn.Module):
    """Truncated VGG-style feature extractor producing a 512-d embedding.

    The classifier head is replaced by one 3x3 conv and one fully connected
    layer. Weights are drawn from a fixed seed and never trained.
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or EmbedderConfig()
        gen = torch.Generator().manual_seed(config.seed)
        layers, prev = [], 3
        for c in config.conv_stage_channels:
            layers += [nn.Conv2d(prev, c, 3, padding=1), nn.ReLU(True), nn.MaxPool2d(2)]
            prev = c
        self.features = nn.Sequential(*layers)
        self.conv = nn.Conv2d(prev, EMBEDDING_DIM, 3, padding=1)
        self.fc = nn.Linear(EMBEDDING_DIM, EMBEDDING_DIM)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, (nn.Conv2d, nn.Linear)):
                    fan_in = m.weight[0].numel()
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                    m.bias.zero_()
        self.requires_grad_(False)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def forward(self, img):
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"embedder expects N x 3 x H x W, got {tuple(img.shape)}")
        s = self.config.input_size
        if img.shape[-2:] != (s, s):
            img = F.interpolate(img, size=(s, s), mode="bilinear", align_corners=False)
        x = self.features((img - self.mean) / self.std)
        x = F.relu(self.conv(x))
        x = x.mean(dim=(2, 3))
        return self.fc(x)


def semantic_embedding(embedder, img):
    """Embed a single H x W x 3 array (or a N x 3 x H x W tensor)."""
    if not torch.is_tensor(img):
        img = torch.as_tensor(img, dtype=torch.float32).permute(2, 0, 1)[None]
        with torch.no_grad():
            return embedder(img)[0].numpy()
    return embedder(img)


@dataclass
class NetworkConfig:
    generator_channels: int = 16
    residual_blocks: int = 4
    dilation: int = 2
    discriminator_layers: int = 4
    discriminator_channels: int = 32
    spectral_norm: bool = True
    embedder_channels: tuple = (64, 128, 256, 512)
    embedder_input: int = 64
    embedder_seed: int = 1234

    def __post_init__(self):
        self.embedder_channels = tuple(int(c) for c in self.embedder_channels)

    def to_dict(self):
        d = asdict(self)
        d["embedder_channels"] = list(self.embedder_channels)
        return d

    def edge_generator(self):
        return GeneratorConfig(self.generator_channels, self.residual_blocks, self.dilation, 3, 1)

    def inpaint_generator(self):
        return GeneratorConfig(self.generator_channels, self.residual_blocks, self.dilation, 5, 3)

    def edge_discriminator(self):
        return DiscriminatorConfig(self.discriminator_layers, self.discriminator_channels,
                                   self.spectral_norm, input_channels=2)

    def image_discriminator(self):
        return DiscriminatorConfig(self.discriminator_layers, self.discriminator_channels,
                                   self.spectral_norm, input_channels=3)

    def embedder(self):
        return EmbedderConfig(self.embedder_channels, self.embedder_input, EMBEDDING_DIM, self.embedder_seed)


@dataclass
class ModelBundle:
    """The four learnable networks plus the frozen embedder and their provenance.

    ``history`` lists completed stages in order; ``provenance`` is the latest
    one, or ``"fresh"`` for an untrained bundle.
    """

    config: NetworkConfig
    edge_generator: EdgeGenerator
    inpaint_generator: InpaintGenerator
    edge_discriminator: PatchDiscriminator
    image_discriminator: PatchDiscriminator
    embedder: SemanticEmbedder
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config=None, seed=0):
        config = config or NetworkConfig()
        torch.manual_seed(seed)
        return cls(
            config,
            EdgeGenerator(config.edge_generator()),
            InpaintGenerator(config.inpaint_generator()),
            PatchDiscriminator(config.edge_discriminator()),
            PatchDiscriminator(config.image_discriminator()),
            SemanticEmbedder(config.embedder()),
        )

    @property
    def provenance(self):
        return self.history[-1] if self.history else "fresh"

    def modules(self):
        return {
            "edge_generator": self.edge_generator,
            "inpaint_generator": self.inpaint_generator,
            "edge_discriminator": self.edge_discriminator,
            "image_discriminator": self.image_discriminator,
            "embedder": self.embedder,
        }

    def eval(self):
        for m in self.modules().values():
            m.eval()
        return self

    def to(self, device):
        for m in self.modules().values():
            m.to(device)
        return self

    def copy(self):
        return copy.deepcopy(self)


def config_hash(payload):
    """Stable short hash of a JSON-serializable config snapshot."""
    blob = json.dumps(payload, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
