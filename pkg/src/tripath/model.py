"""The three-pathway video classifier.

Three residual backbones consume the same clip at different temporal
rates and widths: a slow, temporally subsampled full-width stream, a fast
full-rate thin stream, and a regular full-rate full-width stream.
Directed lateral connections fuse features between the streams at stage
boundaries; pooled features from all streams feed one linear head.

Two wirings are supported plus a no-connection variant:

- ``regular_to_fast``: regular adds into fast (1x1x1 projection), fast
  concatenates into slow (time-strided conv, doubled source channels).
- ``regular_to_slow``: regular adds into slow after the same
  time-strided rate matching, fast concatenates into slow as above.
- ``none``: pathways never interact before the head (late fusion).

Dropping the regular pathway from ``pathways`` yields the classical
two-stream slow/fast architecture.
"""

import dataclasses
import json
import struct

import numpy as np

from . import tensor as T
from .data import CLASS_NT, CLASS_T
from .errors import ConfigError, ContractError, InputError, ShapeError
from .layers import (
    BackboneSpec,
    Conv3d,
    Linear,
    Module,
    ModuleDict,
    Stage,
    Stem,
)

WIRING_REGULAR_TO_FAST = "regular_to_fast"
WIRING_REGULAR_TO_SLOW = "regular_to_slow"
WIRING_NONE = "none"
WIRINGS = (WIRING_REGULAR_TO_FAST, WIRING_REGULAR_TO_SLOW, WIRING_NONE)

PATHWAY_ORDER = ("slow", "fast", "regular")
FUSION_POINTS = ("stem", "1", "2", "3")

MIN_SPATIAL = 32


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Widths, rates and wiring of a multi-pathway network.

    ``alpha`` is the speed ratio (slow stride = alpha * fast stride over
    the input clip) and ``beta`` the fast channel fraction (fast width =
    slow width * beta). ``fusion_stages`` names the boundaries after
    which lateral fusion runs: 'stem' plus stage numbers 1 to 3.
    """

    depth: int = 18
    slow_width: int = 64
    beta: float = 0.125
    regular_width: int = 64
    alpha: int = 4
    fast_stride: int = 1
    slow_stride: int = None
    wiring: str = WIRING_REGULAR_TO_FAST
    pathways: tuple = PATHWAY_ORDER
    fusion_stages: tuple = FUSION_POINTS
    in_channels: int = 1
    num_classes: int = 2
    head_dropout_rate: float = 0.0

    def __post_init__(self):
        if self.wiring not in WIRINGS:
            raise ConfigError(f"unknown wiring {self.wiring!r}; choose from {WIRINGS}")
        paths = tuple(self.pathways)
        if not set(paths) <= set(PATHWAY_ORDER) or len(set(paths)) != len(paths):
            raise ConfigError(f"pathways must be distinct names from {PATHWAY_ORDER}, got {paths!r}")
        if "slow" not in paths or "fast" not in paths:
            raise ConfigError("the slow and fast pathways are required")
        object.__setattr__(self, "pathways", tuple(p for p in PATHWAY_ORDER if p in paths))
        stages = tuple(str(s) for s in self.fusion_stages)
        if not set(stages) <= set(FUSION_POINTS):
            raise ConfigError(f"fusion_stages must come from {FUSION_POINTS}, got {stages!r}")
        object.__setattr__(self, "fusion_stages", tuple(s for s in FUSION_POINTS if s in stages))
        if self.alpha < 1 or self.fast_stride < 1:
            raise ConfigError(f"alpha and fast_stride must be >= 1, got {self.alpha}, {self.fast_stride}")
        if self.slow_stride is not None and self.slow_stride != self.alpha * self.fast_stride:
            raise ConfigError(f"slow_stride {self.slow_stride} inconsistent with "
                              f"alpha*fast_stride = {self.alpha * self.fast_stride}")
        object.__setattr__(self, "slow_stride", self.alpha * self.fast_stride)
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if self.slow_width < 1 or self.regular_width < 1:
            raise ConfigError("pathway widths must be positive")
        if self.fast_width < 1:
            raise ConfigError(f"beta {self.beta} gives fast width {self.slow_width * self.beta:.3f} < 1")
        if self.num_classes != 2:
            raise ConfigError(f"this is a binary classifier; num_classes must be 2, got {self.num_classes}")
        if not 0.0 <= self.head_dropout_rate < 1.0:
            raise ConfigError(f"head_dropout_rate must lie in [0, 1), got {self.head_dropout_rate}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        BackboneSpec(self.depth, self.slow_width)

    @property
    def fast_width(self):
        return int(round(self.slow_width * self.beta))

    def pathway_width(self, name):
        return {"slow": self.slow_width, "fast": self.fast_width, "regular": self.regular_width}[name]

    def pathway_stride(self, name):
        return self.slow_stride if name == "slow" else self.fast_stride

    def backbone_spec(self, name):
        return BackboneSpec(self.depth, self.pathway_width(name))

    @property
    def min_clip_len(self):
        return self.slow_stride

    @property
    def head_in_features(self):
        return sum(self.backbone_spec(p).final_channels for p in self.pathways)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["pathways"] = list(self.pathways)
        d["fusion_stages"] = list(self.fusion_stages)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("pathways", "fusion_stages"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    # -- fusion bookkeeping ----------------------------------------------

    def fusion_boundaries(self):
        """Active fusion points as indices of the stage they feed (0-3)."""
        if self.wiring == WIRING_NONE:
            return ()
        mapping = {"stem": 0, "1": 1, "2": 2, "3": 3}
        return tuple(mapping[s] for s in self.fusion_stages)

    def width_into_stage(self, name, index):
        """A pathway's own channel count arriving at stage ``index``."""
        spec = self.backbone_spec(name)
        return spec.base_width if index == 0 else spec.stage_out_channels(index - 1)

    def concat_growth(self, index):
        """Extra slow-input channels contributed by fusion at this boundary."""
        if index in self.fusion_boundaries():
            return 2 * self.width_into_stage("fast", index)
        return 0

    def fusion_conv_parameter_count(self):
        """Parameters of the lateral fusion convs themselves."""
        total = 0
        has_regular = "regular" in self.pathways
        for b in self.fusion_boundaries():
            cs = self.width_into_stage("slow", b)
            cf = self.width_into_stage("fast", b)
            total += (2 * cf) * cf * 5
            if has_regular:
                cr = self.width_into_stage("regular", b)
                if self.wiring == WIRING_REGULAR_TO_FAST:
                    total += cf * cr
                elif self.wiring == WIRING_REGULAR_TO_SLOW:
                    total += (2 * cr) * cr * 5 + cs * (2 * cr)
        return total

    def lateral_parameter_overhead(self):
        """All parameters attributable to the lateral wiring.

        Fusion convs, the widened input slices of slow-stage convs that
        consume concatenated channels, and any shortcut projection (conv
        plus norm) that exists only because concatenation changed the
        block's input width.
        """
        total = self.fusion_conv_parameter_count()
        spec = self.backbone_spec("slow")
        for b in self.fusion_boundaries():
            growth = self.concat_growth(b)
            if growth == 0:
                continue
            width = spec.stage_width(b)
            kt = spec.TEMPORAL_KERNELS[b]
            stride = spec.SPATIAL_STRIDES[b]
            if spec.bottleneck:
                total += width * growth * kt
            else:
                total += width * growth * kt * 3 * 3
            base_in = self.width_into_stage("slow", b)
            out = spec.stage_out_channels(b)
            if stride != 1 or base_in != out:
                total += out * growth
            else:
                total += out * (base_in + growth) + 2 * out
        return total


class CrossRateFusion(Module):
    """Time-strided conv matching a fast-rate stream to the slow rate.

    Kernel 5 on time, stride alpha, output channels twice the source;
    the result is concatenated onto the destination's channels.
    """

    def __init__(self, source_channels, alpha, rng=None):
        super().__init__()
        self.conv = Conv3d(source_channels, 2 * source_channels, (5, 1, 1),
                           stride=(alpha, 1, 1), padding=(2, 0, 0), bias=False, rng=rng)
        self.out_channels = 2 * source_channels

    def forward(self, x):
        return self.conv(x)


class SameRateFusion(Module):
    """1x1x1 projection onto the destination's channels, fused by addition."""

    def __init__(self, source_channels, dest_channels, rng=None):
        super().__init__()
        self.conv = Conv3d(source_channels, dest_channels, (1, 1, 1), bias=False, rng=rng)

    def forward(self, x):
        return self.conv(x)


class RateMatchedFusion(Module):
    """Cross-rate matching followed by a same-rate projection, for addition.

    Used for regular-to-slow connections: the regular stream runs at the
    fast rate, so it is first rate-matched exactly like fast-to-slow
    (kernel 5, stride alpha, doubled channels) and then projected 1x1x1
    onto the slow stream's channels.
    """

    def __init__(self, source_channels, dest_channels, alpha, rng=None):
        super().__init__()
        self.rate_match = CrossRateFusion(source_channels, alpha, rng=rng)
        self.project = SameRateFusion(self.rate_match.out_channels, dest_channels, rng=rng)

    def forward(self, x):
        return self.project(self.rate_match(x))


class MultiPathNet(Module):
    """Slow/fast/regular backbones with lateral fusion and a linear head."""

    def __init__(self, config, rng=None):
        super().__init__()
        if not isinstance(config, ModelConfig):
            raise ConfigError(f"expected ModelConfig, got {type(config).__name__}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config

        self.stems = ModuleDict()
        self.stages = ModuleDict()
        boundaries = config.fusion_boundaries()
        for name in config.pathways:
            spec = config.backbone_spec(name)
            self.stems[name] = Stem(config.in_channels, spec.base_width, rng=rng)
            for i in range(4):
                channels = config.width_into_stage(name, i)
                if name == "slow" and i in boundaries:
                    channels += config.concat_growth(i)
                self.stages[f"{name}{i}"] = Stage(spec, i, channels, rng=rng)

        self.fusions = ModuleDict()
        for b in boundaries:
            cs = config.width_into_stage("slow", b)
            cf = config.width_into_stage("fast", b)
            self.fusions[f"fast_to_slow_{b}"] = CrossRateFusion(cf, config.alpha, rng=rng)
            if "regular" in config.pathways:
                cr = config.width_into_stage("regular", b)
                if config.wiring == WIRING_REGULAR_TO_FAST:
                    self.fusions[f"regular_to_fast_{b}"] = SameRateFusion(cr, cf, rng=rng)
                elif config.wiring == WIRING_REGULAR_TO_SLOW:
                    self.fusions[f"regular_to_slow_{b}"] = RateMatchedFusion(cr, cs, config.alpha, rng=rng)

        self.head = Linear(config.head_in_features, config.num_classes, rng=rng)

    # -- convenience views ------------------------------------------------

    @property
    def alpha(self):
        return self.config.alpha

    @property
    def beta(self):
        return self.config.beta

    @property
    def wiring(self):
        return self.config.wiring

    def fusion_parameters(self):
        """The lateral fusion convs' parameters, by registry name."""
        return dict(self.fusions.named_parameters("fusions."))

    # -- forward ----------------------------------------------------------

    def _check_clip(self, clip):
        if not isinstance(clip, T.Tensor):
            raise InputError(f"clip must be a Tensor, got {type(clip).__name__}")
        if clip.ndim != 5:
            raise ShapeError(f"clip must be [batch, channels, time, height, width], got rank {clip.ndim}")
        b, c, t, h, w = clip.shape
        if c != self.config.in_channels:
            raise InputError(f"clip has {c} channels, model expects {self.config.in_channels}")
        if t < self.config.min_clip_len:
            raise InputError(f"clip of {t} frames is shorter than the slow stride {self.config.min_clip_len}")
        if h < MIN_SPATIAL or w < MIN_SPATIAL:
            raise InputError(f"frames must be at least {MIN_SPATIAL}x{MIN_SPATIAL}, got {h}x{w}")

    def _fuse(self, feats, boundary, trace):
        """Apply this boundary's lateral connections, reading raw features.

        Every fusion consumes the pre-fusion features of its source so the
        result does not depend on application order.
        """
        out = dict(feats)
        add_to = {}
        if f"regular_to_fast_{boundary}" in self.fusions:
            add_to["fast"] = self.fusions[f"regular_to_fast_{boundary}"](feats["regular"])
        if f"regular_to_slow_{boundary}" in self.fusions:
            add_to["slow"] = self.fusions[f"regular_to_slow_{boundary}"](feats["regular"])
        for dest, extra in add_to.items():
            out[dest] = T.add(out[dest], extra)
        lateral = self.fusions[f"fast_to_slow_{boundary}"](feats["fast"])
        out["slow"] = T.concat([out["slow"], lateral], axis=1)
        if trace is not None:
            trace.setdefault("fusion", {})[boundary] = lateral
        return out

    def forward(self, clip, rng=None, trace=None):
        """Classify a clip batch; returns logits of shape [batch, 2].

        ``trace``, when given a dict, collects per-stage inputs, the
        cross-rate fusion outputs and pooled pathway features for
        inspection by tests and tools.
        """
        self._check_clip(clip)
        cfg = self.config
        feats = {}
        for name in cfg.pathways:
            sub = T.temporal_subsample(clip, cfg.pathway_stride(name))
            feats[name] = self.stems[name](sub)
        boundaries = cfg.fusion_boundaries()
        if 0 in boundaries:
            feats = self._fuse(feats, 0, trace)
        for i in range(4):
            if trace is not None:
                for name in cfg.pathways:
                    trace.setdefault("stage_inputs", {})[(name, i)] = feats[name]
            feats = {name: self.stages[f"{name}{i}"](feats[name]) for name in cfg.pathways}
            if i < 3 and (i + 1) in boundaries:
                feats = self._fuse(feats, i + 1, trace)
        pooled = [T.global_avg_pool(feats[name]) for name in cfg.pathways]
        if trace is not None:
            trace["pooled"] = dict(zip(cfg.pathways, pooled))
        merged = T.concat(pooled, axis=1) if len(pooled) > 1 else pooled[0]
        if self.training and cfg.head_dropout_rate > 0.0:
            if rng is None:
                raise ContractError("training-mode forward with dropout needs an rng")
            merged = T.dropout(merged, cfg.head_dropout_rate, rng)
        return self.head(merged)

    def predict(self, clip):
        """Class decision per sample; ties go to NT (the cautious default).

        Returns ``(labels, probs)`` where labels is an int array of class
        ids (0 = T, 1 = NT) and probs the softmax probability pairs.
        """
        with T.no_grad():
            logits = self.forward(clip)
            probs = T.softmax(logits).data
        labels = np.where(probs[:, CLASS_T] > probs[:, CLASS_NT], CLASS_T, CLASS_NT).astype(np.int64)
        return labels, probs


def count_parameters(module):
    """Total parameter elements in any module's registry."""
    return module.count_parameters()


# -- checkpoint container ------------------------------------------------
#
# Layout (all integers little-endian):
#   magic   4 bytes  b"TPCK"
#   version uint32   currently 1
#   config  uint64 length + UTF-8 JSON of ModelConfig.to_dict()
#   meta    uint64 length + UTF-8 JSON ({"epoch": ..., "val_accuracy": ...})
#   count   uint64   number of parameters
#   per parameter, in registry order:
#     name   uint32 length + UTF-8 bytes
#     rank   uint32, then rank x uint64 extents
#     data   extents product x float32, little-endian
#
# Floats inside the JSON blocks are written with repr round-tripping, so
# a save/load/save cycle is byte-identical.

CHECKPOINT_MAGIC = b"TPCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, epoch=0, val_accuracy=0.0, extra=None):
    meta = {"epoch": int(epoch), "val_accuracy": float(val_accuracy)}
    if extra:
        meta.update(extra)
    cfg_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    params = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<Q", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<Q", len(params)))
        for name, p in params:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}Q", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; returns (model, metadata)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise InputError(f"checkpoint truncated at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    if take(4) != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<Q", take(8))
    config = ModelConfig.from_dict(json.loads(take(n).decode("utf-8")))
    (n,) = struct.unpack("<Q", take(8))
    meta = json.loads(take(n).decode("utf-8"))
    (count,) = struct.unpack("<Q", take(8))
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack("<I", take(4))
        name = take(ln).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        state[name] = data.astype(np.float32)
    if off != len(blob):
        raise InputError(f"{path}: {len(blob) - off} trailing bytes after checkpoint payload")
    model = MultiPathNet(config)
    model.load_state_dict(state)
    return model, meta
