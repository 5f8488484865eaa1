"""Synthetic time-lapse videos, augmentation and dataset plumbing.

Videos are grayscale sequences of a bright circular well on a dark
background, containing one dark cell mass that divides over time. Class T
(transferable) videos show a regular division schedule reaching four
blobs; class NT (non-transferable) videos arrest early or divide once,
off schedule. Labels are therefore decided by construction, and a
hand-written blob-count feature can grade any generated set.

Frames are stored as 8-bit arrays; augmentation chains are kept symbolic
and applied lazily per frame, so a x20 expanded training set costs no
extra memory. One chain uses one set of parameters for every frame of its
video: the same crop box, the same flips, and literally the same noise
field on each frame.
"""

import dataclasses
import hashlib
import json
import pathlib

import numpy as np
from PIL import Image
from scipy import ndimage

from . import tensor as T
from .errors import InputError, ParamError

CLASS_T = 0
CLASS_NT = 1
CLASS_NAMES = ("T", "NT")

NOISE_SIGMA_RANGE = (0.01, 0.05)
BLUR_SIGMA_RANGE = (0.5, 1.5)
CROP_MIN_KEEP = 0.8


def child_seed(*parts):
    """Stable 64-bit seed derived from any printable parts.

    Per-video seeds hash the global seed with the video id, so generating
    videos in any order (or in parallel) cannot change their content.
    """
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# -- augmentation -------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class AugmentationChain:
    """An ordered list of frame transforms plus the seed that drew them.

    ``transforms`` holds tuples: ("crop", top, left, height, width),
    ("blur", sigma), ("hflip",), ("vflip",), ("transpose",),
    ("noise", sigma). The same parameters apply to every frame.
    """

    transforms: tuple = ()
    seed: int = 0

    KINDS = ("crop", "blur", "hflip", "vflip", "transpose", "noise")

    def __post_init__(self):
        for t in self.transforms:
            if not t or t[0] not in self.KINDS:
                raise ParamError(f"unknown transform {t!r}; kinds are {self.KINDS}")


def sample_chain(rng, height, width):
    """Draw a random augmentation chain for one video variant.

    Each transform is included independently; crop boxes keep at least 80%
    of each dimension and are resized back, square frames may also be
    transposed. Noise comes last so its statistics survive the blur.
    """
    transforms = []
    if rng.random() < 0.5:
        keep_h = int(round(height * rng.uniform(CROP_MIN_KEEP, 1.0)))
        keep_w = int(round(width * rng.uniform(CROP_MIN_KEEP, 1.0)))
        top = int(rng.integers(0, height - keep_h + 1))
        left = int(rng.integers(0, width - keep_w + 1))
        transforms.append(("crop", top, left, keep_h, keep_w))
    if rng.random() < 0.5:
        transforms.append(("blur", float(rng.uniform(*BLUR_SIGMA_RANGE))))
    if rng.random() < 0.5:
        transforms.append(("hflip",))
    if rng.random() < 0.5:
        transforms.append(("vflip",))
    if height == width and rng.random() < 0.5:
        transforms.append(("transpose",))
    if rng.random() < 0.5:
        transforms.append(("noise", float(rng.uniform(*NOISE_SIGMA_RANGE))))
    return AugmentationChain(tuple(transforms), seed=int(rng.integers(1 << 62)))


def _resize_bilinear(frames, out_h, out_w):
    """Bilinear resize of a [N, H, W] stack, pixel centers aligned."""
    n, h, w = frames.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)[None, None, :]
    p00 = frames[:, y0][:, :, x0]
    p01 = frames[:, y0][:, :, x1]
    p10 = frames[:, y1][:, :, x0]
    p11 = frames[:, y1][:, :, x1]
    top = p00 * (1 - wx) + p01 * wx
    bot = p10 * (1 - wx) + p11 * wx
    return top * (1 - wy) + bot * wy


def apply_chain(frames, chain):
    """Run every transform of ``chain`` over a float32 [N, H, W] stack.

    All frames receive identical parameters; the noise transform draws a
    single [H, W] field from the chain seed and adds it to every frame.
    Output is clamped to [0, 1].
    """
    out = np.asarray(frames, dtype=np.float32)
    if out.ndim != 3:
        raise ParamError(f"apply_chain expects [frames, height, width], got shape {out.shape}")
    for t in chain.transforms:
        kind = t[0]
        if kind == "crop":
            _, top, left, ch, cw = t
            n, h, w = out.shape
            if top < 0 or left < 0 or ch < 1 or cw < 1 or top + ch > h or left + cw > w:
                raise ParamError(f"crop box {t[1:]} outside {h}x{w} frame")
            out = _resize_bilinear(out[:, top:top + ch, left:left + cw], h, w)
        elif kind == "blur":
            out = ndimage.gaussian_filter(out, sigma=(0.0, t[1], t[1]), mode="nearest")
        elif kind == "hflip":
            out = out[:, :, ::-1]
        elif kind == "vflip":
            out = out[:, ::-1, :]
        elif kind == "transpose":
            if out.shape[1] != out.shape[2]:
                raise ParamError(f"transpose needs square frames, got {out.shape[1]}x{out.shape[2]}")
            out = np.swapaxes(out, 1, 2)
        elif kind == "noise":
            field = np.random.default_rng(chain.seed).normal(0.0, t[1], size=out.shape[1:])
            out = out + field.astype(np.float32)[None, :, :]
    return np.clip(out, 0.0, 1.0).astype(np.float32, copy=False)


# -- the video container ------------------------------------------------------


class VideoClip:
    """A labeled grayscale video with an optional lazy augmentation chain.

    Raw frames live as uint8; ``frame_stack`` materializes float32 frames
    in [0, 1] with the chain applied. ``source_id`` tracks the original
    video through augmentation so splits can keep variants together.
    """

    def __init__(self, frames_u8, label, video_id, frame_period_minutes=15.0,
                 chain=None, source_id=None, generator_seed=None):
        frames_u8 = np.asarray(frames_u8)
        if frames_u8.ndim != 3 or frames_u8.dtype != np.uint8:
            raise ParamError(f"frames must be uint8 [T, H, W], got {frames_u8.dtype} {frames_u8.shape}")
        if frames_u8.shape[0] < 1:
            raise ParamError("a video needs at least one frame")
        if label not in (CLASS_T, CLASS_NT):
            raise ParamError(f"label must be {CLASS_T} (T) or {CLASS_NT} (NT), got {label!r}")
        self.frames_u8 = frames_u8
        self.label = int(label)
        self.id = str(video_id)
        self.frame_period_minutes = float(frame_period_minutes)
        self.chain = chain
        self.source_id = self.id if source_id is None else str(source_id)
        self.generator_seed = generator_seed

    @property
    def label_name(self):
        return CLASS_NAMES[self.label]

    @property
    def n_frames(self):
        return self.frames_u8.shape[0]

    @property
    def height(self):
        return self.frames_u8.shape[1]

    @property
    def width(self):
        return self.frames_u8.shape[2]

    def frame_stack(self, indices=None):
        """Materialized float32 frames [K, H, W] in [0, 1], chain applied."""
        if indices is None:
            raw = self.frames_u8
        else:
            raw = self.frames_u8[np.asarray(indices, dtype=np.int64)]
        frames = raw.astype(np.float32) / 255.0
        if self.chain is not None and self.chain.transforms:
            frames = apply_chain(frames, self.chain)
        return frames

    @property
    def frames(self):
        """All frames as [T, 1, H, W] float32 in [0, 1]."""
        return self.frame_stack()[:, None, :, :]

    def replaced(self, **kwargs):
        """Copy with some constructor fields swapped."""
        fields = dict(frames_u8=self.frames_u8, label=self.label, video_id=self.id,
                      frame_period_minutes=self.frame_period_minutes, chain=self.chain,
                      source_id=self.source_id, generator_seed=self.generator_seed)
        fields.update(kwargs)
        return VideoClip(**fields)


def augment(clip, chain):
    """A lazily augmented view of ``clip``; chains compose left to right."""
    if clip.chain is not None and clip.chain.transforms:
        chain = AugmentationChain(clip.chain.transforms + tuple(chain.transforms), seed=chain.seed)
    return clip.replaced(chain=chain, source_id=clip.source_id)


def expand_training_set(clips, factor=20, seed=0):
    """Each clip plus (factor - 1) independently augmented variants.

    Variant chains are seeded from the global seed and the source id, so
    the expansion is deterministic and order independent.
    """
    if factor < 1:
        raise ParamError(f"expansion factor must be >= 1, got {factor}")
    out = []
    for clip in clips:
        out.append(clip)
        for k in range(1, factor):
            rng = np.random.default_rng(child_seed(seed, clip.id, k))
            chain = sample_chain(rng, clip.height, clip.width)
            variant = augment(clip, chain)
            out.append(variant.replaced(video_id=f"{clip.id}.aug{k:02d}"))
    return out


def truncate(clip, keep_frames):
    """First ``keep_frames`` frames of the video, label unchanged."""
    keep = int(keep_frames)
    if not 1 <= keep <= clip.n_frames:
        raise ParamError(f"keep_frames must lie in [1, {clip.n_frames}], got {keep_frames}")
    return clip.replaced(frames_u8=clip.frames_u8[:keep])


def sample_clip(video, clip_len=64, strategy="uniform"):
    """A fixed-length model input clip as a [1, clip_len, H, W] tensor.

    Long videos are subsampled (uniform spacing or the front run); short
    ones keep all frames and repeat the last one to fill.
    """
    if clip_len < 1:
        raise ParamError(f"clip_len must be positive, got {clip_len}")
    if strategy not in ("uniform", "front"):
        raise ParamError(f"unknown sampling strategy {strategy!r}; choose 'uniform' or 'front'")
    t = video.n_frames
    if t < clip_len:
        indices = np.concatenate([np.arange(t), np.full(clip_len - t, t - 1)])
    elif strategy == "front":
        indices = np.arange(clip_len)
    elif clip_len == 1:
        indices = np.zeros(1, dtype=np.int64)
    else:
        indices = np.round(np.arange(clip_len) * (t - 1) / (clip_len - 1)).astype(np.int64)
    frames = video.frame_stack(indices)
    return T.Tensor(frames[None, :, :, :])


def clip_batch(videos, clip_len=64, strategy="uniform"):
    """Stack per-video clips into [B, 1, clip_len, H, W] with labels."""
    clips = [sample_clip(v, clip_len, strategy) for v in videos]
    data = np.ascontiguousarray(np.stack([c.data[0] for c in clips])[:, None, :, :, :])
    labels = np.array([v.label for v in videos], dtype=np.int64)
    return T.Tensor(data), labels


# -- synthetic generator ------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SyntheticParams:
    """Geometry, intensities and event schedule of the synthetic videos.

    Frame windows are absolute frame indices at the default 300-frame
    length. Both classes start as one blob; class T divides twice inside
    the division windows (1 -> 2 -> 4 blobs), class NT either arrests at
    one blob or divides once, late. All default events happen after frame
    150, so truncating a video there removes the separating signal.
    """

    image_size: int = 64
    n_frames: int = 300
    nt_fraction: float = 0.65
    well_radius_frac: float = 0.42
    well_intensity: float = 0.55
    background_intensity: float = 0.05
    blob_intensity: float = 0.18
    blob_radius_frac: float = 0.13
    noise_sigma: float = 0.02
    first_division_window: tuple = (155, 200)
    second_division_window: tuple = (215, 265)
    nt_arrest_probability: float = 0.6
    nt_division_window: tuple = (160, 260)
    drift_px: float = 2.0
    transition_frames: int = 10
    frame_period_minutes: float = 15.0

    def __post_init__(self):
        if not 0.0 < self.nt_fraction < 1.0:
            raise ParamError(f"nt_fraction must lie in (0, 1), got {self.nt_fraction}")
        if self.n_frames < 120:
            raise ParamError(f"n_frames must be >= 120, got {self.n_frames}")
        if self.image_size < 32:
            raise ParamError(f"image_size must be >= 32, got {self.image_size}")
        if not 0.0 < self.blob_radius_frac < self.well_radius_frac <= 0.5:
            raise ParamError("need blob radius < well radius <= half the image "
                             f"(got {self.blob_radius_frac}, {self.well_radius_frac})")
        for name in ("well_intensity", "background_intensity", "blob_intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParamError(f"{name} must lie in [0, 1], got {v}")
        for name in ("first_division_window", "second_division_window", "nt_division_window"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi < self.n_frames:
                raise ParamError(f"{name} {getattr(self, name)} outside (0, {self.n_frames})")
        if self.first_division_window[1] >= self.second_division_window[0]:
            raise ParamError("division windows must be ordered and disjoint")
        if self.noise_sigma < 0:
            raise ParamError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def well_radius(self):
        return self.well_radius_frac * self.image_size

    @property
    def blob_radius(self):
        return self.blob_radius_frac * self.image_size

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in ("first_division_window", "second_division_window", "nt_division_window"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("first_division_window", "second_division_window", "nt_division_window"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _generation_anchors(n_blobs, radius_ring, phase, center):
    """Evenly spaced anchor points on a ring around the well center."""
    if n_blobs == 1:
        return np.array([center], dtype=np.float64)
    angles = phase + 2.0 * np.pi * np.arange(n_blobs) / n_blobs
    return np.stack([center[0] + radius_ring * np.sin(angles),
                     center[1] + radius_ring * np.cos(angles)], axis=1)


def _smooth_drift(rng, n_frames, amplitude):
    """A slow random walk, low-pass filtered and scaled to +-amplitude."""
    steps = rng.normal(0.0, 1.0, size=(n_frames, 2))
    walk = np.cumsum(steps, axis=0)
    walk = ndimage.gaussian_filter1d(walk, sigma=12.0, axis=0, mode="nearest")
    span = np.abs(walk).max()
    if span > 0:
        walk = walk * (amplitude / span)
    return walk


def _video_plan(params, rng, label):
    """Event times and blob trajectories for one video.

    Returns a list of generations; each generation is (start_frame,
    positions [n_frames, n_blobs, 2], radius). Generation g is rendered
    from its start frame until the next generation starts.
    """
    p = params
    if label == CLASS_T:
        e1 = int(rng.integers(p.first_division_window[0], p.first_division_window[1] + 1))
        e2 = int(rng.integers(p.second_division_window[0], p.second_division_window[1] + 1))
        events = [0, e1, e2]
    elif rng.random() < p.nt_arrest_probability:
        events = [0]
    else:
        events = [0, int(rng.integers(p.nt_division_window[0], p.nt_division_window[1] + 1))]

    center = np.array([p.image_size / 2.0, p.image_size / 2.0])
    generations = []
    for g, start in enumerate(events):
        n_blobs = 2 ** g
        radius = p.blob_radius / (2.0 ** (g / 2.0))
        if n_blobs == 1:
            ring = 0.0
        else:
            needed = (2.4 * radius + 2.0) / (2.0 * np.sin(np.pi / n_blobs))
            ring = min(needed, 0.62 * p.well_radius)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        anchors = _generation_anchors(n_blobs, ring, phase, center)
        drift = np.stack([_smooth_drift(rng, p.n_frames, p.drift_px) for _ in range(n_blobs)], axis=1)
        positions = anchors[None, :, :] + drift
        if g > 0:
            # children glide from their parent's anchor over the transition
            parent_anchors = generations[g - 1][3]
            ramp = np.clip((np.arange(p.n_frames) - start) / max(p.transition_frames, 1), 0.0, 1.0)
            parents = parent_anchors[np.arange(n_blobs) // 2]
            positions = parents[None, :, :] + (positions - parents[None, :, :]) * ramp[:, None, None]
        generations.append((start, positions, radius, anchors))
    return generations


def _render_video(params, rng, label):
    """Rasterize one video as uint8 [T, H, W]."""
    p = params
    size = p.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    center = (size - 1) / 2.0
    dist_center = np.sqrt((yy - center) ** 2 + (xx - center) ** 2)
    edge = 1.5
    well_alpha = np.clip((p.well_radius - dist_center) / edge * 0.5 + 0.5, 0.0, 1.0)
    base = p.background_intensity + (p.well_intensity - p.background_intensity) * well_alpha

    generations = _video_plan(params, rng, label)
    frames = np.broadcast_to(base, (p.n_frames,) + base.shape).copy()
    for g, (start, positions, radius, _) in enumerate(generations):
        end = generations[g + 1][0] if g + 1 < len(generations) else p.n_frames
        if end <= start:
            continue
        span = slice(start, end)
        alpha = np.zeros((end - start, size, size), dtype=np.float32)
        for b in range(positions.shape[1]):
            py = positions[span, b, 0].astype(np.float32)[:, None, None]
            px = positions[span, b, 1].astype(np.float32)[:, None, None]
            d = np.sqrt((yy[None] - py) ** 2 + (xx[None] - px) ** 2)
            alpha = np.maximum(alpha, np.clip((radius - d) / edge * 0.5 + 0.5, 0.0, 1.0))
        frames[span] = frames[span] * (1.0 - alpha) + p.blob_intensity * alpha

    if p.noise_sigma > 0:
        frames = frames + rng.normal(0.0, p.noise_sigma, size=frames.shape)
    frames = np.clip(frames, 0.0, 1.0)
    return np.round(frames * 255.0).astype(np.uint8)


def generate_synthetic(params, n_videos, seed=0):
    """Deterministically generate labeled videos.

    Every video derives its own rng from the global seed and its id, so
    regeneration (in any order) is bitwise identical.
    """
    if n_videos < 1:
        raise ParamError(f"n_videos must be >= 1, got {n_videos}")
    clips = []
    for i in range(n_videos):
        video_id = f"video_{i:05d}"
        vseed = child_seed(seed, video_id)
        rng = np.random.default_rng(vseed)
        label = CLASS_NT if rng.random() < params.nt_fraction else CLASS_T
        frames = _render_video(params, rng, label)
        clips.append(VideoClip(frames, label, video_id,
                               frame_period_minutes=params.frame_period_minutes,
                               generator_seed=vseed))
    return clips


# -- the hand-written separability oracle -------------------------------------


def count_blobs(frame, params, threshold=0.36, min_area=4):
    """Connected dark components inside the well on one float frame."""
    size = params.image_size
    yy, xx = np.mgrid[0:size, 0:size]
    center = (size - 1) / 2.0
    inside = (yy - center) ** 2 + (xx - center) ** 2 <= (0.8 * params.well_radius) ** 2
    mask = (frame < threshold) & inside
    labeled, n = ndimage.label(mask)
    if n == 0:
        return 0
    areas = ndimage.sum_labels(np.ones_like(labeled), labeled, index=np.arange(1, n + 1))
    return int(np.sum(areas >= min_area))


def classify_by_blob_count(clip, params, threshold=0.36, min_area=4):
    """Label a video from the blob count of its final frame: 3+ means T."""
    final = clip.frame_stack([clip.n_frames - 1])[0]
    return CLASS_T if count_blobs(final, params, threshold, min_area) >= 3 else CLASS_NT


def oracle_accuracy(clips, params, **kwargs):
    """Fraction of clips the blob-count feature labels correctly."""
    hits = sum(1 for c in clips if classify_by_blob_count(c, params, **kwargs) == c.label)
    return hits / len(clips)


# -- splits -------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DatasetSplit:
    """Id lists for one fold; augmented variants follow their source."""

    fold: int
    train: tuple
    validation: tuple
    test: tuple

    def __post_init__(self):
        groups = [set(self.train), set(self.validation), set(self.test)]
        total = sum(len(g) for g in groups)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ParamError("split id lists overlap")


def make_splits(clips, test_fraction, n_folds=1, seed=0, val_fraction=0.15):
    """Stratified test carve-out plus k-fold train/validation rotation.

    Splitting happens at source-video granularity: every augmented
    variant lands in the same split as its source. With one fold the
    validation set takes ``val_fraction`` of the remaining sources.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParamError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if n_folds < 1:
        raise ParamError(f"n_folds must be >= 1, got {n_folds}")

    by_source = {}
    labels = {}
    for c in clips:
        by_source.setdefault(c.source_id, []).append(c.id)
        labels[c.source_id] = c.label

    rng = np.random.default_rng(seed)
    per_class = {}
    for sid in sorted(by_source):
        per_class.setdefault(labels[sid], []).append(sid)
    for ids in per_class.values():
        rng.shuffle(ids)

    test_ids, rest_ids = [], {}
    for cls, ids in sorted(per_class.items()):
        n_test = int(round(len(ids) * test_fraction))
        if n_test == 0 or n_test == len(ids):
            raise ParamError(f"class {CLASS_NAMES[cls]} has too few sources ({len(ids)}) "
                             f"for test fraction {test_fraction}")
        test_ids.extend(ids[:n_test])
        rest_ids[cls] = ids[n_test:]

    def expand(source_ids):
        out = []
        for sid in source_ids:
            out.extend(by_source[sid])
        return tuple(sorted(out))

    splits = []
    for fold in range(n_folds):
        val_ids, train_ids = [], []
        for cls, ids in sorted(rest_ids.items()):
            if n_folds == 1:
                n_val = max(1, int(round(len(ids) * val_fraction)))
                if n_val >= len(ids):
                    raise ParamError(f"class {CLASS_NAMES[cls]} has too few sources for a validation split")
                val_ids.extend(ids[:n_val])
                train_ids.extend(ids[n_val:])
            else:
                if len(ids) < n_folds:
                    raise ParamError(f"class {CLASS_NAMES[cls]} has {len(ids)} sources, fewer than {n_folds} folds")
                chunk = [sid for j, sid in enumerate(ids) if j % n_folds == fold]
                val_ids.extend(chunk)
                train_ids.extend(sid for sid in ids if sid not in chunk)
        splits.append(DatasetSplit(fold=fold, train=expand(train_ids),
                                   validation=expand(val_ids), test=expand(test_ids)))
    return splits


# -- disk layout ---------------------------------------------------------------
#
# dataset_dir/
#   manifest.tsv          one record per video: id label frames height width seed
#   splits.json           {"folds": [{"fold": 0, "train": [...], ...}]}  (optional)
#   <video id>/000000.png zero-padded 8-bit grayscale frames


def save_dataset(clips, directory):
    """Write original videos as PNG frame folders plus a manifest."""
    root = pathlib.Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = ["id\tlabel\tframes\theight\twidth\tseed"]
    for clip in clips:
        if clip.chain is not None and clip.chain.transforms:
            raise ParamError(f"{clip.id}: augmented variants are regenerated at load time, not saved")
        vdir = root / clip.id
        vdir.mkdir(exist_ok=True)
        for i in range(clip.n_frames):
            Image.fromarray(clip.frames_u8[i], mode="L").save(vdir / f"{i:06d}.png")
        seed = "-" if clip.generator_seed is None else str(clip.generator_seed)
        lines.append(f"{clip.id}\t{clip.label_name}\t{clip.n_frames}\t{clip.height}\t{clip.width}\t{seed}")
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(directory):
    """Read a dataset directory written by ``save_dataset``."""
    root = pathlib.Path(directory)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise InputError(f"{directory}: no manifest.tsv")
    clips = []
    lines = manifest.read_text(encoding="utf-8").strip().split("\n")
    for line in lines[1:]:
        vid, label_name, n, h, w, seed = line.split("\t")
        if label_name not in CLASS_NAMES:
            raise InputError(f"{vid}: unknown label {label_name!r}")
        frames = []
        vdir = root / vid
        for i in range(int(n)):
            path = vdir / f"{i:06d}.png"
            if not path.is_file():
                raise InputError(f"{vid}: missing frame file {path.name}")
            frames.append(np.asarray(Image.open(path), dtype=np.uint8))
        stack = np.stack(frames)
        if stack.shape != (int(n), int(h), int(w)):
            raise InputError(f"{vid}: frames are {stack.shape}, manifest says ({n}, {h}, {w})")
        clips.append(VideoClip(stack, CLASS_NAMES.index(label_name), vid,
                               generator_seed=None if seed == "-" else int(seed)))
    return clips


def save_splits(splits, directory):
    payload = {"folds": [{"fold": s.fold, "train": list(s.train),
                          "validation": list(s.validation), "test": list(s.test)}
                         for s in splits]}
    path = pathlib.Path(directory) / "splits.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_splits(directory):
    path = pathlib.Path(directory) / "splits.json"
    if not path.is_file():
        raise InputError(f"{directory}: no splits.json")
    payload = json.loads(path.read_text(encoding="utf-8"))
    return [DatasetSplit(fold=f["fold"], train=tuple(f["train"]),
                         validation=tuple(f["validation"]), test=tuple(f["test"]))
            for f in payload["folds"]]
