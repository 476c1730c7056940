"""Desk-scale frozen artifacts: conditional generator, classifier, discriminator.

The generator receives its class information only through one row of the
embedding matrix ``W`` (concatenated to the latent vector), so every
experiment in this package edits ``W`` and nothing else. Smooth activations
(SiLU) are used in the generator and classifier so that finite-difference
checks of the embedding gradient are meaningful.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError, TrainingFailure
from .seeding import make_rng, seed_torch
from .synthdata import LabeledImageSet

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "1"
PROB_FLOOR = 1e-12
TAPS = ("pixel", "midlayer", "penultimate", "softmax")


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class GeneratorConfig:
    num_classes: int = 10
    latent_dim: int = 32
    embed_dim: int = 16
    image_size: int = 32
    channels: int = 3
    hidden: int = 256
    base_channels: int = 32
    embed_init_std: float = 1.0
    pixel_norm: bool = True


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int = 10
    image_size: int = 32
    channels: int = 3
    widths: tuple = (16, 32, 64)
    penultimate: int = 64


@dataclass(frozen=True)
class GANTrainConfig:
    iterations: int = 3000
    batch_size: int = 32
    lr_g: float = 2e-4
    lr_d: float = 4e-4
    betas: tuple = (0.5, 0.999)
    ema_decay: float = 0.995
    snapshot_interval: int = 1000
    loss: str = "hinge"
    seed: int = 0
    log_every: int = 250


@dataclass(frozen=True)
class ClassifierTrainConfig:
    epochs: int = 8
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0
    noise_std: float = 0.05
    seed: int = 0


# ---------------------------------------------------------------------------
# modules


class PixelNorm(nn.Module):
    """Per-sample, per-position channel normalization (batch independent)."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + 1e-8)


class GeneratorBody(nn.Module):
    """MLP on (c ⊕ z) followed by an upsampling conv head to a tanh image."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        n_up = int(np.log2(cfg.image_size // 4))
        if 4 * 2**n_up != cfg.image_size:
            raise ConfigurationError("image_size must be 4 * 2^k", "image_size")
        ch = cfg.base_channels
        self.fc = nn.Sequential(
            nn.Linear(cfg.embed_dim + cfg.latent_dim, cfg.hidden),
            nn.SiLU(),
            nn.Linear(cfg.hidden, ch * 4 * 4),
            nn.SiLU(),
        )
        blocks = []
        for _ in range(n_up):
            out = max(ch // 2, 16)
            blocks += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(ch, out, 3, padding=1), nn.SiLU()]
            if cfg.pixel_norm:
                blocks.append(PixelNorm())
            ch = out
        blocks += [nn.Conv2d(ch, cfg.channels, 3, padding=1), nn.Tanh()]
        self.head = nn.Sequential(*blocks)

    def forward(self, c: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        h = self.fc(torch.cat([c, z], dim=1))
        h = h.view(h.shape[0], self.cfg.base_channels, 4, 4)
        return self.head(h)  # NCHW


class ClassifierNet(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        w1, w2, w3 = cfg.widths
        self.block1 = nn.Sequential(nn.Conv2d(cfg.channels, w1, 3, padding=1), nn.SiLU(), nn.AvgPool2d(2))
        self.block2 = nn.Sequential(nn.Conv2d(w1, w2, 3, padding=1), nn.SiLU(), nn.AvgPool2d(2))
        self.block3 = nn.Sequential(nn.Conv2d(w2, w3, 3, padding=1), nn.SiLU(), nn.AvgPool2d(2))
        spatial = cfg.image_size // 8
        self.fc = nn.Sequential(nn.Linear(w3 * spatial * spatial, cfg.penultimate), nn.SiLU())
        self.head = nn.Linear(cfg.penultimate, cfg.num_classes)

    def forward_taps(self, x: torch.Tensor) -> dict:
        h1 = self.block1(x)
        h2 = self.block2(h1)
        h3 = self.block3(h2)
        pen = self.fc(h3.flatten(1))
        logits = self.head(pen)
        return {"midlayer": h2.flatten(1), "penultimate": pen, "logits": logits}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_taps(x)["logits"]


class DiscriminatorNet(nn.Module):
    """Projection discriminator: D(x, y) = psi(h) + <e_y, h>."""

    def __init__(self, num_classes: int, channels: int = 3, width: int = 32):
        super().__init__()
        sn = nn.utils.parametrizations.spectral_norm
        self.body = nn.Sequential(
            sn(nn.Conv2d(channels, width, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
            sn(nn.Conv2d(width, width * 2, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
            sn(nn.Conv2d(width * 2, width * 4, 4, stride=2, padding=1)),
            nn.LeakyReLU(0.2),
        )
        self.linear = sn(nn.Linear(width * 4, 1))
        self.embed = sn(nn.Embedding(num_classes, width * 4))
        self.num_classes = num_classes
        self.channels = channels
        self.width = width

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        h = self.body(x).sum(dim=(2, 3))
        return self.linear(h).squeeze(1) + (self.embed(y) * h).sum(dim=1)


# ---------------------------------------------------------------------------
# checkpoints


def param_checksum(module: nn.Module) -> str:
    """SHA-256 over the module's state dict (names, dtypes, bytes)."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        arr = t.detach().cpu().contiguous().numpy()
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def array_checksum(arr) -> str:
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


@dataclass
class GeneratorCheckpoint:
    config: GeneratorConfig
    body: GeneratorBody
    embedding: torch.Tensor  # W, [K, d_c]; the only editable surface
    version: str = CHECKPOINT_VERSION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _freeze(self.body)
        self.embedding = self.embedding.detach().clone()
        if self.embedding.shape != (self.config.num_classes, self.config.embed_dim):
            raise ShapeError(
                f"embedding shape {tuple(self.embedding.shape)} != "
                f"({self.config.num_classes}, {self.config.embed_dim})"
            )

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    @property
    def dtype(self) -> torch.dtype:
        return self.embedding.dtype

    def with_embedding(self, W) -> "GeneratorCheckpoint":
        """Copy sharing the frozen body but carrying a new embedding matrix."""
        W = torch.as_tensor(W, dtype=self.embedding.dtype)
        return GeneratorCheckpoint(self.config, self.body, W, self.version, dict(self.meta))

    def to(self, dtype: torch.dtype) -> "GeneratorCheckpoint":
        body = copy.deepcopy(self.body).to(dtype)
        return GeneratorCheckpoint(self.config, body, self.embedding.to(dtype), self.version, dict(self.meta))

    def body_checksum(self) -> str:
        return param_checksum(self.body)

    def checksum(self) -> str:
        return hashlib.sha256((self.body_checksum() + array_checksum(self.embedding)).encode()).hexdigest()


@dataclass
class ClassifierCheckpoint:
    config: ClassifierConfig
    net: ClassifierNet
    version: str = CHECKPOINT_VERSION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _freeze(self.net)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def taps(self) -> dict:
        """Feature dimension of every named tap."""
        c = self.config
        s = c.image_size
        return {
            "pixel": s * s * c.channels,
            "midlayer": c.widths[1] * (s // 4) ** 2,
            "penultimate": c.penultimate,
            "softmax": c.num_classes,
        }

    def to(self, dtype: torch.dtype) -> "ClassifierCheckpoint":
        return ClassifierCheckpoint(self.config, copy.deepcopy(self.net).to(dtype), self.version, dict(self.meta))

    def checksum(self) -> str:
        return param_checksum(self.net)


@dataclass
class DiscriminatorCheckpoint:
    net: DiscriminatorNet
    version: str = CHECKPOINT_VERSION
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _freeze(self.net)

    def checksum(self) -> str:
        return param_checksum(self.net)


def new_generator(cfg: GeneratorConfig, seed: int = 0) -> GeneratorCheckpoint:
    with torch.random.fork_rng():
        seed_torch(seed)
        body = GeneratorBody(cfg)
        W = torch.randn(cfg.num_classes, cfg.embed_dim) * cfg.embed_init_std
    return GeneratorCheckpoint(cfg, body, W)


def new_classifier(cfg: ClassifierConfig, seed: int = 0) -> ClassifierCheckpoint:
    with torch.random.fork_rng():
        seed_torch(seed)
        net = ClassifierNet(cfg)
    return ClassifierCheckpoint(cfg, net)


# ---------------------------------------------------------------------------
# forward operations


def _as_tensor(x, dtype) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == dtype else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def generate(g: GeneratorCheckpoint, c, Z) -> torch.Tensor:
    """Images G(c, z) for every row of ``Z``, shape [n, H, W, C] in [-1, 1].

    Differentiable with respect to ``c`` when ``c`` requires grad.
    """
    c = _as_tensor(c, g.dtype)
    Z = _as_tensor(Z, g.dtype)
    if c.ndim != 1 or c.shape[0] != g.embed_dim:
        raise ShapeError(f"embedding must have shape ({g.embed_dim},), got {tuple(c.shape)}")
    if Z.ndim != 2 or Z.shape[1] != g.latent_dim:
        raise ShapeError(f"latent batch must have shape (n, {g.latent_dim}), got {tuple(Z.shape)}")
    cfg = g.config
    if Z.shape[0] == 0:
        return torch.zeros(0, cfg.image_size, cfg.image_size, cfg.channels, dtype=g.dtype)
    out = g.body(c.unsqueeze(0).expand(Z.shape[0], -1), Z)
    return out.permute(0, 2, 3, 1)


def generate_classes(g: GeneratorCheckpoint, labels, Z) -> torch.Tensor:
    """Per-row class conditioning: row i uses embedding W[labels[i]]."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    Z = _as_tensor(Z, g.dtype)
    return g.body(g.embedding[labels], Z).permute(0, 2, 3, 1)


def _to_classifier_input(p: ClassifierCheckpoint, images) -> torch.Tensor:
    x = _as_tensor(images, next(p.net.parameters()).dtype)
    if x.ndim != 4:
        raise ShapeError(f"images must be [n, H, W, C], got shape {tuple(x.shape)}")
    if x.shape[-1] != p.config.channels:
        raise ShapeError(f"classifier expects {p.config.channels} channels, got {x.shape[-1]}")
    x = x.permute(0, 3, 1, 2)
    if x.shape[-1] != p.config.image_size or x.shape[-2] != p.config.image_size:
        x = F.interpolate(x, size=(p.config.image_size, p.config.image_size), mode="bilinear", align_corners=False)
    return x


def classify(p: ClassifierCheckpoint, images) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (probabilities, log-probabilities), each [n, K].

    Log-probabilities are taken of the probabilities floored at 1e-12.
    """
    x = _to_classifier_input(p, images)
    if x.shape[0] == 0:
        empty = torch.zeros(0, p.num_classes, dtype=x.dtype)
        return empty, empty
    probs = torch.softmax(p.net(x), dim=1)
    return probs, torch.log(probs.clamp_min(PROB_FLOOR))


def features(p: ClassifierCheckpoint, images, tap: str) -> torch.Tensor:
    """Feature batch [n, D] at a named tap (pixel, midlayer, penultimate, softmax)."""
    if tap not in TAPS:
        raise ConfigurationError(f"unknown feature tap {tap!r}; expected one of {TAPS}", "tap")
    if tap == "pixel":
        x = _as_tensor(images, next(p.net.parameters()).dtype)
        return x.reshape(x.shape[0], -1)
    if tap == "softmax":
        return classify(p, images)[0]
    x = _to_classifier_input(p, images)
    return p.net.forward_taps(x)[tap]


@torch.no_grad()
def batched(fn, images, batch_size: int = 500) -> torch.Tensor:
    """Apply ``fn`` to ``images`` in chunks and concatenate (inference only)."""
    parts = [fn(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    return torch.cat(parts, dim=0)


# ---------------------------------------------------------------------------
# training


def _check_finite(value: float, what: str, it: int, last_snapshot):
    if not np.isfinite(value):
        raise TrainingFailure(f"non-finite {what} at iteration {it}", last_snapshot=last_snapshot)


def train_toy_classifier(
    data: LabeledImageSet,
    train_cfg: ClassifierTrainConfig = ClassifierTrainConfig(),
    net_cfg: ClassifierConfig | None = None,
) -> ClassifierCheckpoint:
    """Train the toy classifier with Adam on cross-entropy.

    Light Gaussian pixel noise is added during training so the classifier
    remains calibrated on slightly imperfect generator outputs.
    """
    spec = data.spec
    if net_cfg is None:
        net_cfg = ClassifierConfig(
            num_classes=spec.num_classes, image_size=spec.image_size, channels=spec.channels
        )
    rng = make_rng(train_cfg.seed, "classifier-batches")
    with torch.random.fork_rng():
        seed_torch(train_cfg.seed)
        net = ClassifierNet(net_cfg)
        opt = torch.optim.Adam(net.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
        x_all = torch.from_numpy(data.images).permute(0, 3, 1, 2).contiguous()
        y_all = torch.from_numpy(data.labels)
        n = len(data)
        step = 0
        for epoch in range(train_cfg.epochs):
            order = rng.permutation(n)
            total, count = 0.0, 0
            for i in range(0, n, train_cfg.batch_size):
                idx = torch.from_numpy(order[i : i + train_cfg.batch_size])
                x = x_all[idx]
                if train_cfg.noise_std > 0:
                    x = x + torch.from_numpy(rng.standard_normal(x.shape).astype(np.float32)) * train_cfg.noise_std
                loss = F.cross_entropy(net(x), y_all[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                _check_finite(loss.item(), "classifier loss", step, None)
                total += loss.item() * len(idx)
                count += len(idx)
                step += 1
            logger.info("classifier epoch %d loss %.4f", epoch, total / count)
    meta = {"train": dataclasses.asdict(train_cfg), "dataset": spec.to_dict()}
    return ClassifierCheckpoint(net_cfg, net, meta=meta)


def train_toy_gan(
    data: LabeledImageSet,
    train_cfg: GANTrainConfig = GANTrainConfig(),
    gen_cfg: GeneratorConfig | None = None,
    disc_width: int = 16,
):
    """Train a class-conditional GAN with a projection discriminator.

    Hinge loss, Adam, and an exponential moving average of the generator
    (body and embedding) whose weights are what the returned checkpoints
    hold.

    Returns:
        (GeneratorCheckpoint, DiscriminatorCheckpoint, snapshots) where
        ``snapshots`` is a list of ``(iteration, GeneratorCheckpoint)`` taken
        every ``snapshot_interval`` iterations.

    Raises:
        TrainingFailure: on a non-finite loss; carries the last snapshot.
    """
    spec = data.spec
    if train_cfg.loss != "hinge":
        raise ConfigurationError(f"unsupported GAN loss {train_cfg.loss!r}", "loss")
    if gen_cfg is None:
        gen_cfg = GeneratorConfig(num_classes=spec.num_classes, image_size=spec.image_size, channels=spec.channels)
    if gen_cfg.num_classes != spec.num_classes:
        raise ConfigurationError("generator num_classes must match the dataset", "num_classes")
    rng = make_rng(train_cfg.seed, "gan-batches")
    K = spec.num_classes
    snapshots = []
    with torch.random.fork_rng():
        seed_torch(train_cfg.seed)
        G = GeneratorBody(gen_cfg)
        W = nn.Parameter(torch.randn(K, gen_cfg.embed_dim) * gen_cfg.embed_init_std)
        D = DiscriminatorNet(K, spec.channels, disc_width)
        G_ema = copy.deepcopy(G)
        W_ema = W.detach().clone()
        for p in G_ema.parameters():
            p.requires_grad_(False)
        opt_g = torch.optim.Adam(list(G.parameters()) + [W], lr=train_cfg.lr_g, betas=train_cfg.betas)
        opt_d = torch.optim.Adam(D.parameters(), lr=train_cfg.lr_d, betas=train_cfg.betas)
        x_all = torch.from_numpy(data.images).permute(0, 3, 1, 2).contiguous()
        y_all = torch.from_numpy(data.labels)
        n, bs = len(data), train_cfg.batch_size
        decay = train_cfg.ema_decay

        def snapshot():
            # clip bounds are fixed here so that later edits of W cannot widen them
            bounds = [float(W_ema.min()), float(W_ema.max())]
            meta = {
                "loss": train_cfg.loss,
                "lr_g": train_cfg.lr_g,
                "train": dataclasses.asdict(train_cfg),
                "disc_width": disc_width,
                "embedding_bounds": bounds,
            }
            return GeneratorCheckpoint(gen_cfg, copy.deepcopy(G_ema), W_ema.clone(), meta=meta)

        last = None
        for it in range(1, train_cfg.iterations + 1):
            idx = torch.from_numpy(rng.integers(0, n, size=bs))
            x_real, y_real = x_all[idx], y_all[idx]
            y_fake = torch.from_numpy(rng.integers(0, K, size=bs))
            z = torch.from_numpy(rng.standard_normal((bs, gen_cfg.latent_dim)).astype(np.float32))

            x_fake = G(W[y_fake], z)
            loss_d = F.relu(1.0 - D(x_real, y_real)).mean() + F.relu(1.0 + D(x_fake.detach(), y_fake)).mean()
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            # one generator pass per iteration: the G step reuses x_fake
            loss_g = -D(x_fake, y_fake).mean()
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()

            ld, lg = loss_d.item(), loss_g.item()
            _check_finite(ld, "discriminator loss", it, last)
            _check_finite(lg, "generator loss", it, last)

            with torch.no_grad():
                for pe, p in zip(G_ema.parameters(), G.parameters()):
                    pe.mul_(decay).add_(p, alpha=1.0 - decay)
                W_ema.mul_(decay).add_(W.detach(), alpha=1.0 - decay)

            if it % train_cfg.log_every == 0:
                logger.info("gan iter %d loss_d %.4f loss_g %.4f", it, ld, lg)
            if train_cfg.snapshot_interval > 0 and it % train_cfg.snapshot_interval == 0:
                last = snapshot()
                last.meta["iteration"] = it
                snapshots.append((it, last))

        g = snapshot()
        g.meta["iteration"] = train_cfg.iterations
        d = DiscriminatorCheckpoint(D, meta={"loss": train_cfg.loss, "lr_d": train_cfg.lr_d})
    return g, d, snapshots


# ---------------------------------------------------------------------------
# corruption


CORRUPT_MODES = ("random-far", "cross-class", "scale-down")


def corrupt_class(
    g: GeneratorCheckpoint,
    y: int,
    mode: str,
    *,
    sigma: float = 0.1,
    source: int | None = None,
    distance_factor: float = 6.0,
    seed: int = 0,
) -> GeneratorCheckpoint:
    """Return a copy of ``g`` with row ``y`` of W replaced by a collapsed embedding.

    ``random-far`` moves the row ``distance_factor`` x (median row norm) away
    along a random direction, ``cross-class`` copies row ``source`` and
    ``scale-down`` multiplies the row by ``sigma``.
    """
    K = g.num_classes
    if not 0 <= y < K:
        raise ConfigurationError(f"class {y} out of range [0, {K})", "y")
    if mode not in CORRUPT_MODES:
        raise ConfigurationError(f"unknown corruption mode {mode!r}", "mode")
    W = g.embedding.clone()
    if mode == "random-far":
        if distance_factor < 5.0:
            raise ConfigurationError("distance_factor must be >= 5", "distance_factor")
        median = W.norm(dim=1).median()
        u = torch.from_numpy(make_rng(seed, "random-far", y).standard_normal(g.embed_dim)).to(W.dtype)
        W[y] = W[y] + distance_factor * median * u / u.norm()
    elif mode == "cross-class":
        if source is None or not 0 <= source < K:
            raise ConfigurationError("cross-class corruption needs a valid source class", "source")
        W[y] = W[source]
    else:
        W[y] = W[y] * sigma
    out = g.with_embedding(W)
    out.meta["corruption"] = {"class": int(y), "mode": mode, "sigma": sigma, "source": source, "seed": seed}
    return out
