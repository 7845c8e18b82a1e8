"""The motion-matrix video prediction pipeline.

Frames are encoded one by one into a feature pyramid. Filtered features at the
1/S grid give cosine-similarity motion matrices between consecutive frames. A
3D conv stack predicts matrices from the last observed frame to every future
frame, observed features are transported through the softmax-normalised
matrices at every scale, and a UNet-style decoder turns the composed features
into frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from mmvp.blocks import (
    LEAKY_SLOPE,
    Params,
    RrdbBlock,
    ShuffleSpec,
    conv,
    init_conv,
    init_rrdb,
    pixel_shuffle,
    rrdb_forward,
)
from mmvp.errors import ConfigInvariantError, MatrixStateError, ShapeError
from mmvp.tensor import (
    Tensor,
    avg_pool,
    concat,
    index,
    leaky_relu,
    matmul,
    mse_loss,
    normalize,
    reshape,
    scale,
    softmax,
    stack,
    transpose,
    upsample_nearest,
)


IMAGE = "image"
COMPONENTS = ("encoder", "filter", "predictor", "decoder")

ComposedKey = Union[int, str]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    ``scales`` holds the denominators of the pyramid scales, so ``(1, 2, 4, 8)``
    means full, 1/2, 1/4 and 1/8 resolution; each level halves the previous.
    """

    height: int = 64
    width: int = 64
    channels: int = 1
    t_observed: int = 10
    t_future: int = 10
    c_img: int = 16
    c_motion: int = 32
    downsample: int = 4
    scales: tuple = (1, 2, 4, 8)
    include_image: bool = True
    average_composition: bool = False
    use_filter: bool = True
    keep_full_scale: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(d) for d in self.scales))
        for name in ("height", "width", "channels", "c_img", "c_motion", "downsample"):
            if getattr(self, name) < 1:
                raise ConfigInvariantError(f"{name} must be positive, got {getattr(self, name)}")
        if self.t_observed < 2:
            raise ConfigInvariantError(f"T must be >= 2 (one motion matrix), got {self.t_observed}")
        if self.t_future < 1:
            raise ConfigInvariantError(f"T_prime must be >= 1, got {self.t_future}")
        if len(self.scales) < 2 or self.scales[0] != 1:
            raise ConfigInvariantError(f"scales must start at 1 and hold at least two levels, got {self.scales}")
        for finer, coarser in zip(self.scales, self.scales[1:]):
            if coarser != 2 * finer:
                raise ConfigInvariantError(f"each scale must halve the previous one, got {self.scales}")
        if self.downsample not in self.scales:
            raise ConfigInvariantError(f"matrix scale 1/{self.downsample} is not in the pyramid {self.scales}")
        for d in self.scales:
            if self.height % d or self.width % d:
                raise ConfigInvariantError(f"{self.height}x{self.width} frames are not divisible by {d}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.downsample, self.width // self.downsample

    @property
    def tokens(self) -> int:
        h, w = self.grid
        return h * w

    @property
    def predictor_groups(self) -> int:
        return math.ceil(self.t_future / (self.t_observed - 1))

    @property
    def levels(self) -> int:
        return len(self.scales)

    def channels_at(self, level: int) -> int:
        return self.c_img * 2**level

    @property
    def composed_scales(self) -> tuple:
        if self.include_image and not self.keep_full_scale:
            return self.scales[1:]
        return self.scales


@dataclass
class FeaturePyramid:
    """Encoder output; every tensor is laid out (B, T, C, h, w)."""

    features: dict[int, Tensor]
    filtered: Optional[Tensor] = None


@dataclass
class MotionMatrix:
    """Patch-pair similarities, values shaped (B, h, w, h, w): source then target."""

    values: Tensor
    normalized: bool = False

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def square(self) -> Tensor:
        """(B, N, N) view, rows indexed by source patch."""
        b, h, w = self.values.shape[:3]
        return reshape(self.values, (b, h * w, h * w))


@dataclass
class Prediction:
    frames: Tensor
    raw_matrices: list[MotionMatrix] = field(default_factory=list)
    predicted_matrices: list[MotionMatrix] = field(default_factory=list)
    pyramid: Optional[FeaturePyramid] = None


def _batched(x: Tensor) -> Tensor:
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape)
    if x.ndim != 5:
        raise ShapeError(f"expected (T, C, H, W) or (B, T, C, H, W), got {x.shape}")
    return x


# ─── Parameters ─────────────────────────────────────────────────────────────


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Fresh float32 parameters for every component, keyed by dotted name."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    top = config.levels - 1

    init_conv(params, rng, "encoder.stem", config.channels, config.c_img)
    init_rrdb(params, rng, "encoder.rrdb0", RrdbBlock(config.c_img))
    for level in range(1, config.levels):
        init_conv(params, rng, f"encoder.down{level}", config.channels_at(level - 1), config.channels_at(level))
        init_rrdb(params, rng, f"encoder.rrdb{level}", RrdbBlock(config.channels_at(level)))

    if config.use_filter:
        c_matrix = config.channels_at(config.scales.index(config.downsample))
        init_conv(params, rng, "filter.c0", c_matrix, config.c_img)
        init_conv(params, rng, "filter.c1", config.c_img, config.c_img)

    n = config.tokens
    init_conv(params, rng, "predictor.c0", n, config.c_motion, nd=3)
    init_conv(params, rng, "predictor.c1", config.c_motion, config.c_motion, nd=3)
    init_conv(params, rng, "predictor.c2", config.c_motion, n * config.predictor_groups, nd=3)

    init_rrdb(params, rng, f"decoder.rrdb{top}", RrdbBlock(config.channels_at(top)))
    for level in range(top - 1, -1, -1):
        c = config.channels_at(level)
        init_conv(params, rng, f"decoder.up{level}", config.channels_at(level + 1), 4 * c)
        init_conv(params, rng, f"decoder.fuse{level}", c + _skip_channels(config, level), c)
        init_rrdb(params, rng, f"decoder.rrdb{level}", RrdbBlock(c))
    init_conv(params, rng, "decoder.out", config.c_img, config.channels)
    return params


def _skip_channels(config: ModelConfig, level: int) -> int:
    total = 0
    if config.scales[level] in config.composed_scales:
        total += config.channels_at(level)
    if level == 0 and config.include_image:
        total += config.channels
    return total


@dataclass(frozen=True)
class ParamCount:
    total: int
    breakdown: dict

    @property
    def motion_share(self) -> float:
        motion = self.breakdown.get("filter", 0) + self.breakdown.get("predictor", 0)
        return motion / self.total if self.total else 0.0


def count_params(params: Params) -> ParamCount:
    """Scalar parameter count, overall and per component (name prefix)."""
    breakdown = {name: 0 for name in COMPONENTS if any(k.startswith(name + ".") for k in params)}
    for name, p in params.items():
        component = name.split(".", 1)[0]
        breakdown[component] = breakdown.get(component, 0) + p.size
    return ParamCount(total=int(np.sum([p.size for p in params.values()], dtype=np.int64)), breakdown=breakdown)


# ─── Encoding ───────────────────────────────────────────────────────────────


def encode_frames(frames: Tensor, params: Params, config: ModelConfig) -> FeaturePyramid:
    """Encode every frame independently into one feature map per scale."""
    frames = _batched(frames)
    b, t, c, h, w = frames.shape
    if (c, h, w) != (config.channels, config.height, config.width):
        raise ShapeError(
            f"frames are {c}x{h}x{w}, config expects {config.channels}x{config.height}x{config.width}"
        )

    x = reshape(frames, (b * t, c, h, w))
    x = leaky_relu(conv(params, "encoder.stem", x), LEAKY_SLOPE)
    x = rrdb_forward(x, params, "encoder.rrdb0", RrdbBlock(config.c_img))
    maps = {1: x}
    for level in range(1, config.levels):
        x = leaky_relu(conv(params, f"encoder.down{level}", x, stride=2), LEAKY_SLOPE)
        x = rrdb_forward(x, params, f"encoder.rrdb{level}", RrdbBlock(config.channels_at(level)))
        maps[config.scales[level]] = x

    features = {d: reshape(m, (b, t) + m.shape[1:]) for d, m in maps.items()}
    return FeaturePyramid(features=features)


def filter_features(f: Tensor, params: Params, config: ModelConfig) -> Tensor:
    """Two 3x3 convs turning 1/S features into motion-only features g."""
    if f.ndim != 5 or f.shape[3:] != config.grid:
        raise ShapeError(f"filter block expects features on the {config.grid} grid, got {f.shape}")
    b, t = f.shape[:2]
    x = reshape(f, (b * t,) + f.shape[2:])
    x = leaky_relu(conv(params, "filter.c0", x), LEAKY_SLOPE)
    x = conv(params, "filter.c1", x)
    return reshape(x, (b, t) + x.shape[1:])


# ─── Motion matrices ────────────────────────────────────────────────────────


def build_motion_matrices(g: Union[Tensor, Sequence[Tensor]]) -> list[MotionMatrix]:
    """Cosine similarity of every patch of frame i with every patch of frame i+1.

    ``g`` is either (B, T, C, h, w) or a sequence of per-frame (B, C, h, w)
    maps. Zero-length patch vectors give similarity 0.
    """
    if not isinstance(g, Tensor):
        frames = list(g)
        shapes = {m.shape for m in frames}
        if len(shapes) > 1:
            raise ShapeError(f"per-frame features differ in shape: {sorted(shapes)}")
        g = stack(frames, axis=1)
    if g.ndim != 5:
        raise ShapeError(f"expected (B, T, C, h, w) features, got {g.shape}")
    b, t, c, h, w = g.shape
    if t < 2:
        raise ShapeError(f"need at least two frames to build a motion matrix, got {t}")

    unit = normalize(g, axis=2)
    unit = reshape(transpose(unit, (0, 1, 3, 4, 2)), (b, t, h * w, c))
    matrices = []
    for i in range(t - 1):
        src = index(unit, (slice(None), i))
        dst = index(unit, (slice(None), i + 1))
        sim = matmul(src, transpose(dst, (0, 2, 1)))
        matrices.append(MotionMatrix(reshape(sim, (b, h, w, h, w))))
    return matrices


def predict_matrices(raw: Sequence[MotionMatrix], params: Params, config: ModelConfig) -> list[MotionMatrix]:
    """Predict the T' matrices between the last observed frame and each future frame.

    The raw matrices form a (B, N, T-1, h, w) volume: channels are the
    flattened target heatmap, depth is time, space is the source grid.
    """
    if len(raw) < 1:
        raise ShapeError("matrix prediction needs at least one observed motion matrix")
    if any(m.normalized for m in raw):
        raise MatrixStateError("matrix predictor consumes raw (unnormalised) matrices")

    b, h, w = raw[0].values.shape[:3]
    n = h * w
    slices = [reshape(transpose(m.square(), (0, 2, 1)), (b, n, h, w)) for m in raw]
    x = stack(slices, axis=2)
    x = leaky_relu(conv(params, "predictor.c0", x), LEAKY_SLOPE)
    x = leaky_relu(conv(params, "predictor.c1", x), LEAKY_SLOPE)
    x = conv(params, "predictor.c2", x)

    depth = len(raw)
    groups = x.shape[1] // n
    if groups * depth < config.t_future:
        raise ShapeError(
            f"predictor emits {groups * depth} matrices from {depth} inputs, {config.t_future} needed"
        )
    x = reshape(x, (b, groups, n, depth, h, w))
    x = transpose(x, (0, 1, 3, 4, 5, 2))
    x = reshape(x, (b, groups * depth, h, w, h, w))
    return [MotionMatrix(index(x, (slice(None), j))) for j in range(config.t_future)]


def normalize_matrix(m: MotionMatrix) -> MotionMatrix:
    """Softmax over the target patch axes so every source row sums to 1."""
    if m.normalized:
        raise MatrixStateError("motion matrix is already normalised")
    return MotionMatrix(softmax(m.values, (3, 4)), normalized=True)


# ─── Composition ────────────────────────────────────────────────────────────


def _grid_maps(hs: int, ws: int, h: int, w: int):
    """Maps taking a (N, C, hs, ws) map onto the (h, w) matrix grid and back."""
    if (hs, ws) == (h, w):
        return (lambda x: x), (lambda x: x)
    if hs > h:
        r = hs // h
        if r * h != hs or r * w != ws:
            raise ShapeError(f"a {hs}x{ws} map does not unshuffle onto the {h}x{w} grid")
        spec = ShuffleSpec(r)
        return spec.unshuffle, spec.shuffle
    k = h // hs
    if k * hs != h or k * ws != w:
        raise ShapeError(f"a {hs}x{ws} map does not tile the {h}x{w} grid")
    return (lambda x: upsample_nearest(x, k)), (lambda x: avg_pool(x, k))


def compose_source(
    x: Tensor,
    chain: Sequence[MotionMatrix],
    predicted: Sequence[MotionMatrix],
    average: bool = False,
) -> Tensor:
    """Compose future versions of one observed source, (B, T, C, hs, ws) -> (B, T', C, hs, ws).

    Evaluates sum_i A_i^T X_i in Horner form: Y = X_T + M_{T-1}^T (X_{T-1} + ...),
    then X_hat_j = M_hat_j^T Y.
    """
    for m in list(chain) + list(predicted):
        if not m.normalized:
            raise MatrixStateError("future composition needs normalised matrices")
    b, t, c, hs, ws = x.shape
    if len(chain) != t - 1:
        raise ShapeError(f"{t} observed frames need {t - 1} chained matrices, got {len(chain)}")
    h, w = predicted[0].grid
    to_grid, from_grid = _grid_maps(hs, ws, h, w)

    z = to_grid(reshape(x, (b * t, c, hs, ws)))
    depth = z.shape[1]
    z = transpose(reshape(z, (b, t, depth, h * w)), (0, 1, 3, 2))

    acc = index(z, (slice(None), 0))
    for i in range(1, t):
        carried = matmul(transpose(chain[i - 1].square(), (0, 2, 1)), acc)
        acc = index(z, (slice(None), i)) + carried
    if average:
        acc = scale(acc, 1.0 / t)

    futures = []
    for m in predicted:
        y = matmul(transpose(m.square(), (0, 2, 1)), acc)
        y = reshape(transpose(y, (0, 2, 1)), (b, depth, h, w))
        futures.append(from_grid(y))
    return stack(futures, axis=1)


def compose_future(
    pyramid: FeaturePyramid,
    frames: Tensor,
    chain: Sequence[MotionMatrix],
    predicted: Sequence[MotionMatrix],
    config: ModelConfig,
) -> dict:
    """Composed future features for every composed scale, plus the image when enabled."""
    composed = {}
    for d in config.composed_scales:
        composed[d] = compose_source(pyramid.features[d], chain, predicted, config.average_composition)
    if config.include_image:
        composed[IMAGE] = compose_source(_batched(frames), chain, predicted, config.average_composition)
    return composed


# ─── Decoding ───────────────────────────────────────────────────────────────


def decode_future(composed: dict, params: Params, config: ModelConfig) -> Tensor:
    """UNet-style decoder from composed features, (B, T', C_in, H, W)."""
    required: list[ComposedKey] = list(config.composed_scales) + ([IMAGE] if config.include_image else [])
    for key in required:
        if key not in composed:
            raise ShapeError(f"composed features for scale {key!r} are missing")
    b, t_future = composed[required[0]].shape[:2]

    def flat(key: ComposedKey) -> Tensor:
        x = composed[key]
        return reshape(x, (b * t_future,) + x.shape[2:])

    top = config.levels - 1
    x = rrdb_forward(flat(config.scales[top]), params, f"decoder.rrdb{top}", RrdbBlock(config.channels_at(top)))
    for level in range(top - 1, -1, -1):
        x = leaky_relu(pixel_shuffle(conv(params, f"decoder.up{level}", x), 2), LEAKY_SLOPE)
        skips = []
        if config.scales[level] in config.composed_scales:
            skips.append(flat(config.scales[level]))
        if level == 0 and config.include_image:
            skips.append(flat(IMAGE))
        x = concat([x] + skips, axis=1)
        x = leaky_relu(conv(params, f"decoder.fuse{level}", x), LEAKY_SLOPE)
        x = rrdb_forward(x, params, f"decoder.rrdb{level}", RrdbBlock(config.channels_at(level)))
    x = conv(params, "decoder.out", x)
    return reshape(x, (b, t_future) + x.shape[1:])


# ─── Full pass ──────────────────────────────────────────────────────────────


def run_pipeline(frames: Tensor, params: Params, config: ModelConfig) -> Prediction:
    """Every stage from observed frames to unclamped predicted frames (B, T', C, H, W)."""
    frames = _batched(frames)
    if frames.shape[1] != config.t_observed:
        raise ShapeError(f"expected {config.t_observed} observed frames, got {frames.shape[1]}")

    pyramid = encode_frames(frames, params, config)
    g = pyramid.features[config.downsample]
    if config.use_filter:
        g = filter_features(g, params, config)
    pyramid.filtered = g

    raw = build_motion_matrices(g)
    predicted = [normalize_matrix(m) for m in predict_matrices(raw, params, config)]
    chain = [normalize_matrix(m) for m in raw]
    composed = compose_future(pyramid, frames, chain, predicted, config)
    out = decode_future(composed, params, config)
    return Prediction(frames=out, raw_matrices=raw, predicted_matrices=predicted, pyramid=pyramid)


def forward(
    frames: Tensor,
    targets: Optional[Tensor],
    config: ModelConfig,
    params: Params,
    training: bool = True,
) -> tuple[Tensor, Optional[Tensor]]:
    """Predictions and MSE loss; predictions are clamped to [0, 1] unless training.

    The loss always uses the unclamped output.
    """
    single = frames.ndim == 4
    result = run_pipeline(frames, params, config)
    out = result.frames

    loss = None
    if targets is not None:
        targets = _batched(targets)
        if targets.shape != out.shape:
            raise ShapeError(f"targets {targets.shape} do not match predictions {out.shape}")
        loss = mse_loss(out, targets)

    if not training:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    if single:
        out = index(out, 0)
    return out, loss


def predict(params: Params, config: ModelConfig, observed: np.ndarray) -> np.ndarray:
    """Inference on a (T, C, H, W) or (B, T, C, H, W) float array, clamped to [0, 1]."""
    dtype = next(iter(params.values())).dtype
    out, _ = forward(Tensor(observed, dtype=dtype), None, config, params, training=False)
    return out.data
