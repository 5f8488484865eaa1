"""Network building blocks: modules, normalization, residual stages.

Modules register parameters and submodules on attribute assignment, so
``named_parameters`` can enumerate every tensor under stable dotted names
in construction order. All normalization is group normalization; there is
no batch-statistics state anywhere, which keeps behaviour identical
between training and evaluation apart from dropout.
"""

import dataclasses
import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ParamError, ShapeError


def uniform_init(rng, shape, fan_in):
    """Zero-mean uniform weights with bound 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return T.Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


def default_num_groups(channels):
    """Group count rule: min(8, C), falling back to gcd(8, C) when needed."""
    g = min(8, channels)
    if channels % g == 0:
        return g
    return math.gcd(8, channels)


class Module:
    """Base class with automatic parameter and child registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, T.Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        else:
            self._params.pop(name, None)
            self._children.pop(name, None)
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def zero_grads(self):
        T.zero_grads(self.parameters())

    def train(self, mode=True):
        for _, m in self.named_modules():
            object.__setattr__(m, "training", bool(mode))
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ParamError(f"state mismatch: missing {missing[:4]}, unexpected {unexpected[:4]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {name}: stored shape {arr.shape} vs model shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def count_parameters(self):
        return sum(p.numel() for p in self.parameters())


class ModuleList(Module):
    """A sequence of child modules registered under their indices."""

    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


class ModuleDict(Module):
    """Child modules registered under caller-chosen string keys."""

    def __init__(self, modules=None):
        super().__init__()
        for key, m in (modules or {}).items():
            self[key] = m

    def __setitem__(self, key, module):
        self._children[str(key)] = module

    def __getitem__(self, key):
        return self._children[str(key)]

    def __contains__(self, key):
        return str(key) in self._children

    def keys(self):
        return self._children.keys()

    def forward(self, *args, **kwargs):
        raise NotImplementedError("ModuleDict is a container, not a layer")


class Conv3d(Module):
    """3D convolution layer; padding defaults to 'same' for stride 1 axes."""

    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1, 1), padding=(0, 0, 0),
                 bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        kernel = tuple(int(k) for k in kernel)
        fan_in = in_channels * kernel[0] * kernel[1] * kernel[2]
        self.weight = uniform_init(rng, (out_channels, in_channels) + kernel, fan_in)
        self.bias = uniform_init(rng, (out_channels,), fan_in) if bias else None
        self.stride = tuple(int(s) for s in stride)
        self.padding = tuple(int(p) for p in padding)

    def forward(self, x):
        return T.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    """Group normalization with learned per-channel scale and shift.

    Field names follow the domain type: gamma scales, beta_shift shifts.
    """

    def __init__(self, channels, num_groups=None, epsilon=1e-5):
        super().__init__()
        self.num_groups = default_num_groups(channels) if num_groups is None else int(num_groups)
        if channels % self.num_groups != 0:
            raise ConfigError(f"{channels} channels not divisible into {self.num_groups} groups")
        if epsilon <= 0:
            raise ParamError(f"epsilon must be positive, got {epsilon}")
        self.epsilon = float(epsilon)
        self.gamma = T.Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta_shift = T.Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)

    def forward(self, x):
        return T.group_norm(x, self.gamma, self.beta_shift, self.num_groups, eps=self.epsilon)


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None, zero_bias=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = uniform_init(rng, (out_features, in_features), in_features)
        if zero_bias:
            self.bias = T.Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)
        else:
            self.bias = uniform_init(rng, (out_features,), in_features)

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class MaxPool3d(Module):
    def __init__(self, window, stride=None, padding=(0, 0, 0)):
        super().__init__()
        self.window = tuple(window)
        self.stride = self.window if stride is None else tuple(stride)
        self.padding = tuple(padding)

    def forward(self, x):
        return T.maxpool3d(x, self.window, stride=self.stride, padding=self.padding)


class BasicBlock3d(Module):
    """Two 3x3 (spatial) convs with group norms and a residual shortcut.

    The first conv carries the block's spatial stride and the temporal
    kernel extent; temporal stride is always 1. A strided or
    channel-changing shortcut gets a 1x1x1 projection conv plus norm.
    """

    expansion = 1

    def __init__(self, in_channels, out_channels, temporal_kernel=1, stride=1, rng=None):
        super().__init__()
        kt = int(temporal_kernel)
        s = int(stride)
        self.conv1 = Conv3d(in_channels, out_channels, (kt, 3, 3), stride=(1, s, s),
                            padding=(kt // 2, 1, 1), bias=False, rng=rng)
        self.norm1 = GroupNorm(out_channels)
        self.conv2 = Conv3d(out_channels, out_channels, (kt, 3, 3), stride=(1, 1, 1),
                            padding=(kt // 2, 1, 1), bias=False, rng=rng)
        self.norm2 = GroupNorm(out_channels)
        if s != 1 or in_channels != out_channels:
            self.project = Conv3d(in_channels, out_channels, (1, 1, 1), stride=(1, s, s),
                                  bias=False, rng=rng)
            self.project_norm = GroupNorm(out_channels)
        else:
            self.project = None
        self.out_channels = out_channels

    def forward(self, x):
        y = T.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        shortcut = x if self.project is None else self.project_norm(self.project(x))
        if y.shape != shortcut.shape:
            raise ConfigError(f"residual branch {y.shape} vs shortcut {shortcut.shape}")
        return T.relu(T.add(y, shortcut))


class BottleneckBlock3d(Module):
    """1x1x1 reduce, 3x3 spatial, 1x1x1 expand (x4), residual shortcut.

    The temporal kernel extent sits on the first conv together with the
    spatial stride, mirroring the basic block's layout.
    """

    expansion = 4

    def __init__(self, in_channels, width, temporal_kernel=1, stride=1, rng=None):
        super().__init__()
        kt = int(temporal_kernel)
        s = int(stride)
        out_channels = width * self.expansion
        self.conv1 = Conv3d(in_channels, width, (kt, 1, 1), stride=(1, s, s),
                            padding=(kt // 2, 0, 0), bias=False, rng=rng)
        self.norm1 = GroupNorm(width)
        self.conv2 = Conv3d(width, width, (1, 3, 3), stride=(1, 1, 1),
                            padding=(0, 1, 1), bias=False, rng=rng)
        self.norm2 = GroupNorm(width)
        self.conv3 = Conv3d(width, out_channels, (1, 1, 1), bias=False, rng=rng)
        self.norm3 = GroupNorm(out_channels)
        if s != 1 or in_channels != out_channels:
            self.project = Conv3d(in_channels, out_channels, (1, 1, 1), stride=(1, s, s),
                                  bias=False, rng=rng)
            self.project_norm = GroupNorm(out_channels)
        else:
            self.project = None
        self.out_channels = out_channels

    def forward(self, x):
        y = T.relu(self.norm1(self.conv1(x)))
        y = T.relu(self.norm2(self.conv2(y)))
        y = self.norm3(self.conv3(y))
        shortcut = x if self.project is None else self.project_norm(self.project(x))
        if y.shape != shortcut.shape:
            raise ConfigError(f"residual branch {y.shape} vs shortcut {shortcut.shape}")
        return T.relu(T.add(y, shortcut))


class Stem(Module):
    """Entry block: 1x7x7 conv, group norm, relu, 1x3x3 max pool.

    Both the conv and the pool stride only spatially; the time axis passes
    through untouched.
    """

    def __init__(self, in_channels, out_channels, rng=None):
        super().__init__()
        self.conv = Conv3d(in_channels, out_channels, (1, 7, 7), stride=(1, 2, 2),
                           padding=(0, 3, 3), bias=False, rng=rng)
        self.norm = GroupNorm(out_channels)
        self.pool = MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
        self.out_channels = out_channels

    def forward(self, x):
        return self.pool(T.relu(self.norm(self.conv(x))))


@dataclasses.dataclass(frozen=True)
class BackboneSpec:
    """Depth and width of a residual backbone.

    Depth 18 uses four stages of two basic blocks; depth 50 uses
    bottleneck stages of 3, 4, 6 and 3 blocks with expansion 4. Stage
    widths double from ``base_width``; stages 3 and 4 use temporal kernel
    3, earlier stages 1; stages 2 to 4 stride spatially by 2.
    """

    depth: int
    base_width: int

    BLOCK_COUNTS = {18: (2, 2, 2, 2), 50: (3, 4, 6, 3)}
    TEMPORAL_KERNELS = (1, 1, 3, 3)
    SPATIAL_STRIDES = (1, 2, 2, 2)

    def __post_init__(self):
        if self.depth not in self.BLOCK_COUNTS:
            raise ConfigError(f"unsupported depth {self.depth}; choose 18 or 50")
        if self.base_width < 1:
            raise ConfigError(f"base_width must be positive, got {self.base_width}")

    @property
    def bottleneck(self):
        return self.depth == 50

    @property
    def expansion(self):
        return BottleneckBlock3d.expansion if self.bottleneck else BasicBlock3d.expansion

    @property
    def block_counts(self):
        return self.BLOCK_COUNTS[self.depth]

    def stage_width(self, index):
        """Inner width of stage ``index`` (0-based)."""
        return self.base_width * (2 ** index)

    def stage_out_channels(self, index):
        return self.stage_width(index) * self.expansion

    @property
    def final_channels(self):
        return self.stage_out_channels(3)


class Stage(Module):
    """One backbone stage: a run of residual blocks sharing a width."""

    def __init__(self, spec, index, in_channels, rng=None):
        super().__init__()
        width = spec.stage_width(index)
        kt = spec.TEMPORAL_KERNELS[index]
        stride = spec.SPATIAL_STRIDES[index]
        blocks = []
        channels = in_channels
        for b in range(spec.block_counts[index]):
            s = stride if b == 0 else 1
            if spec.bottleneck:
                block = BottleneckBlock3d(channels, width, temporal_kernel=kt, stride=s, rng=rng)
            else:
                block = BasicBlock3d(channels, width, temporal_kernel=kt, stride=s, rng=rng)
            blocks.append(block)
            channels = block.out_channels
        self.blocks = ModuleList(blocks)
        self.out_channels = channels

    def forward(self, x):
        return self.blocks(x)


class Backbone(Module):
    """Stem plus four residual stages for a single pathway."""

    def __init__(self, spec, in_channels, rng=None):
        super().__init__()
        self.spec = spec
        self.stem = Stem(in_channels, spec.base_width, rng=rng)
        channels = spec.base_width
        stages = []
        for i in range(4):
            stage = Stage(spec, i, channels, rng=rng)
            stages.append(stage)
            channels = stage.out_channels
        self.stages = ModuleList(stages)
        self.out_channels = channels

    def forward(self, x):
        return self.stages(self.stem(x))


def build_backbone(spec, in_channels, rng=None):
    """Construct a standalone backbone from its spec."""
    if not isinstance(spec, BackboneSpec):
        spec = BackboneSpec(*spec)
    return Backbone(spec, in_channels, rng=rng)
