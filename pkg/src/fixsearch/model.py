"""Desk-scale two-stream encoder / ASPP / decoder network for search fixation density.

The image and target streams run through one shared encoder + ASPP. Target
features are used directly as depthwise correlation kernels over the image
features, and the response is decoded back to a probability map at input
resolution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from fixsearch import nn
from fixsearch.errors import ConfigError, ShapeError
from fixsearch.nn import functional as F

KL_EPSILON = 1e-7


@dataclass
class ModelConfig:
    base_channels: int = 8
    feature_channels: int = 16
    aspp_rates: tuple = (4, 8, 12)
    image_dims: tuple = (64, 128)  # (height, width)
    target_dims: tuple = (16, 16)
    in_channels: int = 3
    two_stream: bool = True
    decoder_convs: bool = True
    center_input: bool = True  # subtract each input's per-channel mean (both streams)
    kernel_norm: str = "l1"  # "l1": target features divided by their sum before correlation; "none": raw
    augment: bool = True  # per-step mirrors and glyph-safe shift of each training scene
    augment_colour: bool = True  # also permute colour channels (scene and target alike)
    lr: float = 3e-4
    lr_decay: str = "cosine"  # "cosine" anneals per step down to lr_floor * lr; "none" keeps lr fixed
    lr_floor: float = 0.05
    epochs: int = 30
    batch: int = 1
    seed: int = 7

    def __post_init__(self):
        self.aspp_rates = tuple(int(r) for r in self.aspp_rates)
        self.image_dims = tuple(int(d) for d in self.image_dims)
        self.target_dims = tuple(int(d) for d in self.target_dims)
        self.validate()

    def validate(self):
        for label, dims in (("image_dims", self.image_dims), ("target_dims", self.target_dims)):
            if len(dims) != 2 or any(d <= 0 or d % 8 for d in dims):
                raise ConfigError(f"{label} must be two positive multiples of 8, got {dims}")
        if self.target_dims[0] > self.image_dims[0] or self.target_dims[1] > self.image_dims[1]:
            raise ConfigError("target_dims must not exceed image_dims")
        if self.base_channels < 1 or self.feature_channels < 1:
            raise ConfigError("channel widths must be positive")
        if not self.aspp_rates:
            raise ConfigError("aspp_rates must not be empty")
        if self.batch != 1:
            raise ConfigError("only batch size 1 is supported")
        if self.epochs < 0 or self.lr < 0:
            raise ConfigError("epochs and lr must be non-negative")
        if self.kernel_norm not in ("l1", "none"):
            raise ConfigError(f"kernel_norm must be 'l1' or 'none', got {self.kernel_norm!r}")
        if self.lr_decay not in ("cosine", "none"):
            raise ConfigError(f"lr_decay must be 'cosine' or 'none', got {self.lr_decay!r}")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ConfigError("lr_floor must lie in [0, 1]")

    @property
    def encoder_widths(self):
        """Output widths of the five encoder blocks (VGG16 ratios 1:2:4:8:8)."""
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c, 8 * c)

    @property
    def concat_channels(self):
        return sum(self.encoder_widths[2:])

    @property
    def decoder_widths(self):
        """Scaled analogue of the 128/64/32 decoder filters."""
        c = self.base_channels
        return (2 * c, c, max(c // 2, 1))

    def to_dict(self):
        d = asdict(self)
        for k in ("aspp_rates", "image_dims", "target_dims"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# (convs in block, dilation, pool stride); the last two pools keep resolution
_ENCODER_LAYOUT = ((1, 1, 2), (1, 1, 2), (2, 1, 2), (2, 1, 1), (3, 2, 1))


class SearchModel:
    """Parameters of one network; both streams call the same layer objects."""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.encoder = []
        in_ch = config.in_channels
        for b, ((n_convs, dil, stride), width) in enumerate(zip(_ENCODER_LAYOUT, config.encoder_widths), start=1):
            convs = []
            for k in range(n_convs):
                convs.append(nn.Conv2d(in_ch, width, 3, dilation=dil, rng=rng, name=f"enc{b}.conv{k + 1}"))
                in_ch = width
            self.encoder.append((convs, stride))
        fch = config.feature_channels
        cat = config.concat_channels
        self.aspp_point = nn.Conv2d(cat, fch, 1, rng=rng, name="aspp.point")
        self.aspp_atrous = [nn.Conv2d(cat, fch, 3, dilation=r, rng=rng, name=f"aspp.rate{r}") for r in config.aspp_rates]
        self.aspp_global = nn.Conv2d(cat, fch, 1, rng=rng, name="aspp.global")
        n_branches = 2 + len(config.aspp_rates)
        self.aspp_fuse = nn.Conv2d(n_branches * fch, fch, 1, rng=rng, name="aspp.fuse")
        if config.decoder_convs:
            widths = config.decoder_widths
            self.decoder = []
            prev = fch
            for k, wd in enumerate(widths, start=1):
                self.decoder.append(nn.Conv2d(prev, wd, 3, rng=rng, name=f"dec.conv{k}"))
                prev = wd
            self.head = nn.Conv2d(prev, 1, 3, rng=rng, name="dec.out")
        else:
            self.decoder = []
            self.head = nn.Conv2d(fch, 1, 1, rng=rng, name="dec.out")

    def layers(self):
        out = [c for convs, _ in self.encoder for c in convs]
        out += [self.aspp_point, *self.aspp_atrous, self.aspp_global, self.aspp_fuse]
        out += [*self.decoder, self.head]
        return out

    def named_parameters(self):
        return [(t.name, t) for layer in self.layers() for t in layer.parameters()]

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def parameter_count(self):
        return sum(t.size for t in self.parameters())

    def state(self):
        return [(name, t.data.copy()) for name, t in self.named_parameters()]

    def load_state(self, named):
        params = dict(self.named_parameters())
        names = [n for n, _ in named]
        if names != list(params):
            raise ConfigError("checkpoint parameters do not match the model layout")
        for name, arr in named:
            if params[name].shape != arr.shape:
                raise ConfigError(f"{name}: checkpoint shape {arr.shape} != model {params[name].shape}")
            params[name].data[...] = arr

    # -- forward pieces ---------------------------------------------------
    def encode(self, x):
        """Concatenated outputs of the last three blocks, at 1/8 input resolution."""
        taps = []
        for b, (convs, stride) in enumerate(self.encoder):
            for conv in convs:
                x = nn.relu(conv(x))
            x = F.max_pool2d(x, 2, stride, padding="valid" if stride == 2 else "same")
            if b >= 2:
                taps.append(x)
        return nn.concat(taps, axis=1)

    def features(self, x):
        return aspp_forward(self.encode(x), self)

    def decode(self, feats):
        return decode(feats, self)

    def _prepare(self, x):
        x = as_input(x)
        if self.config.center_input:
            x = nn.Tensor(x.data - x.data.mean(axis=(2, 3), keepdims=True))
        return x

    def forward(self, image, target=None):
        """Return the predicted density as a (1, 1, H, W) tensor summing to 1."""
        img = self._prepare(image)
        feats = self.features(img)
        if self.config.two_stream:
            if target is None:
                raise ShapeError("two-stream model needs a target patch")
            kernel = self.features(self._prepare(target))
            if self.config.kernel_norm == "l1":
                kernel = l1_normalize(kernel)
            feats = cross_convolve(feats, kernel)
        return self.decode(feats)

    __call__ = forward

    def predict(self, image, target=None):
        from fixsearch.fdm import DensityMap

        out = self.forward(image, target).data[0, 0]
        return DensityMap(out)


def as_input(x):
    """Accept (H, W, C) or (C, H, W) arrays or a 4-D tensor; return a (1, C, H, W) tensor."""
    if isinstance(x, nn.Tensor):
        return x
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] in (1, 3) and a.shape[0] not in (1, 3):
        a = a.transpose(2, 0, 1)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ShapeError(f"expected an image array, got shape {a.shape}")
    return nn.Tensor(a)


def build_model(config):
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    config.validate()
    return SearchModel(config)


def aspp_concat(features, model):
    """Concatenated ASPP branches (1x1, one per atrous rate, image pooling) before fusion."""
    if features.ndim != 4 or features.shape[1] != model.aspp_point.weight.shape[1]:
        raise ShapeError(f"ASPP expects {model.aspp_point.weight.shape[1]} channels, got {features.shape}")
    branches = [nn.relu(model.aspp_point(features))]
    branches += [nn.relu(conv(features)) for conv in model.aspp_atrous]
    g = nn.relu(model.aspp_global(F.global_mean(features)))
    branches.append(nn.broadcast_to(g, g.shape[:2] + features.shape[2:]))
    return nn.concat(branches, axis=1)


def aspp_forward(features, model):
    """Five-branch atrous spatial pyramid pooling fused to F channels."""
    return nn.relu(model.aspp_fuse(aspp_concat(features, model)))


def l1_normalize(x, eps=1e-12):
    """Divide non-negative features by their total so the template carries no overall scale."""
    return nn.div(x, nn.add(nn.tsum(x), eps))


def cross_convolve(image_feats, target_feats):
    """Correlate each image-feature channel with the matching target-feature channel.

    No nonlinearity; same padding keeps the image feature resolution.
    """
    if image_feats.ndim != 4 or target_feats.ndim != 4:
        raise ShapeError("cross_convolve expects 4-D tensors")
    if image_feats.shape[1] != target_feats.shape[1]:
        raise ShapeError(f"channel mismatch: image {image_feats.shape} vs target {target_feats.shape}")
    if target_feats.shape[0] != 1:
        raise ShapeError("target features must have batch size 1")
    if target_feats.shape[2] > image_feats.shape[2] or target_feats.shape[3] > image_feats.shape[3]:
        raise ShapeError(f"target {target_feats.shape} larger than image {image_feats.shape}")
    c, h, w = target_feats.shape[1:]
    kernel = nn.reshape(target_feats, (c, 1, h, w))
    return F.depthwise_conv2d(image_feats, kernel, padding="same")


def normalize_output(x):
    """Min-max scale to [0, 1] then divide by the sum; a constant map becomes uniform."""
    lo, hi = nn.amin(x), nn.amax(x)
    span = hi.item() - lo.item()
    if not np.isfinite(span) or span <= 0:
        return nn.Tensor(np.full(x.shape, 1.0 / x.size))
    y = nn.div(nn.sub(x, lo), nn.sub(hi, lo))
    return nn.div(y, nn.tsum(y))


def decode(features, model):
    x = features
    if model.config.decoder_convs:
        for conv in model.decoder:
            x = nn.relu(conv(F.bilinear_upsample2d(x, 2)))
        x = model.head(x)
    else:
        x = F.bilinear_upsample2d(model.head(x), 8)
    return normalize_output(x)


def kl_loss(pred, gt, epsilon=KL_EPSILON):
    """sum_i Q_i * ln(eps + Q_i / (eps + P_i)); Q = ground truth, P = prediction."""
    q = gt.values if hasattr(gt, "values") else np.asarray(gt, dtype=np.float64)
    if pred.size != q.size or pred.shape[-2:] != q.shape[-2:]:
        raise ShapeError(f"prediction {pred.shape} and ground truth {q.shape} differ")
    q = q.reshape(pred.shape)
    ratio = nn.div(q, nn.add(pred, epsilon))
    return nn.tsum(nn.mul(q, nn.log(nn.add(ratio, epsilon))))


def save_config(path, config):
    from fixsearch._io import atomic_write_text

    atomic_write_text(path, json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
