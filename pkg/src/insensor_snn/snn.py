"""One-time-step spiking networks: layers, graph construction, sparsity profiling.

A network is a list of blocks followed by a dense classifier.  Block 0 is the
first layer group (conv -> BN -> spike -> pool).  In ``in_sensor`` mode that
group is replaced by a :class:`~insensor_snn.analog_frontend.FusedFrontend`
evaluated through the analog model, and every activation after it is binary.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import analog_frontend as af
from .numerics import (
    DTYPE,
    DimensionError,
    ParameterError,
    Tensor,
    batchnorm_backward,
    batchnorm_infer,
    batchnorm_train,
    conv2d,
    conv2d_backward,
    conv_output_size,
    dense,
    dense_backward,
    maxpool2d,
    maxpool2d_backward,
)


class ConfigError(ValueError):
    """Raised when a network configuration does not compose."""


# ---------------------------------------------------------------- spiking core

@dataclass
class SpikingActivation:
    v_th: float = 1.0
    surrogate_width: float = 1.0
    trainable: bool = True

    def __post_init__(self):
        if self.surrogate_width <= 0:
            raise ParameterError("surrogate_width must be positive")


def spike_forward(u, v_th: float) -> np.ndarray:
    """Heaviside firing: 1 where ``u >= v_th``."""
    u = np.asarray(u)
    return (u >= v_th).astype(u.dtype if u.dtype.kind == "f" else DTYPE)


def spike_backward(grad_out, u, v_th: float, width: float = 1.0):
    """Boxcar surrogate: ``d spike / du = 1/(2a)`` on ``|u - v_th| <= a``.

    Returns ``(grad_u, grad_v_th)``; the threshold gradient is the negated sum.
    """
    if width <= 0:
        raise ParameterError("surrogate width must be positive")
    u = np.asarray(u)
    g = np.asarray(grad_out)
    if g.shape != u.shape:
        raise DimensionError(f"grad {g.shape} vs input {u.shape}")
    s = (np.abs(u - v_th) <= width) * (0.5 / width)
    grad_u = (g * s).astype(u.dtype, copy=False)
    return grad_u, -float(grad_u.sum())


def hoyer_regularizer(a):
    """``(sum|a|)^2 / sum(a^2)`` and its gradient; 0 for an all-zero tensor."""
    a = np.asarray(a, dtype=np.float64)
    peak = float(np.max(np.abs(a))) if a.size else 0.0
    if peak == 0.0:
        return 0.0, np.zeros_like(a)
    b = a / peak  # scale-invariant; avoids underflow of tiny squares
    s1 = float(np.sum(np.abs(b)))
    s2 = float(np.sum(b * b))
    grad = (2.0 * s1 / s2 * np.sign(b) - 2.0 * s1 * s1 / (s2 * s2) * b) / peak
    return s1 * s1 / s2, grad


# ---------------------------------------------------------------------- layers

class Layer:
    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def params(self):
        return []

    def buffers(self):
        return []


class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=1, rng=None, name="conv"):
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = c_in * kernel * kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel))
        self.weight = Tensor(w, name=f"{name}.weight")
        self.stride, self.padding = stride, padding
        self.name = name
        self.last_input_rate = 0.0
        self.out_hw = (0, 0)

    def forward(self, x, train=False):
        self._x = x
        self.last_input_rate = float(x.mean())
        y = conv2d(x, self.weight.data, self.stride, self.padding)
        self.out_hw = y.shape[-2:]
        return y

    def backward(self, g):
        gx, gw = conv2d_backward(g, self._x, self.weight.data, self.stride, self.padding)
        self.weight.accumulate(gw)
        return gx

    def params(self):
        return [self.weight]

    def macs(self, out_hw=None) -> int:
        c_out, c_in, kh, kw = self.weight.shape
        ho, wo = self.out_hw if out_hw is None else out_hw
        return c_out * c_in * kh * kw * ho * wo


class BatchNorm2d(Layer):
    def __init__(self, c, momentum=0.1, eps=1e-5, name="bn"):
        self.gamma = Tensor(np.ones(c), name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(c), name=f"{name}.beta")
        self.running_mean = Tensor(np.zeros(c), name=f"{name}.running_mean")
        self.running_var = Tensor(np.ones(c), name=f"{name}.running_var")
        self.momentum, self.eps = momentum, eps

    def forward(self, x, train=False):
        if train:
            y, self._cache = batchnorm_train(x, self.gamma.data, self.beta.data,
                                             self.running_mean.data, self.running_var.data,
                                             self.momentum, self.eps)
            return y
        return batchnorm_infer(x, self.gamma.data, self.beta.data,
                               self.running_mean.data, self.running_var.data, self.eps)

    def backward(self, g):
        gx, gg, gb = batchnorm_backward(g, self._cache)
        self.gamma.accumulate(gg)
        self.beta.accumulate(gb)
        return gx

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def bn_params(self) -> af.BNParams:
        return af.BNParams(self.gamma.data, self.beta.data, self.running_mean.data,
                           self.running_var.data, self.eps)


class Spike(Layer):
    def __init__(self, act: SpikingActivation, name="spike"):
        self.v_th = Tensor(np.array([act.v_th]), name=f"{name}.v_th")
        self.width = act.surrogate_width
        self.trainable = act.trainable
        self.hoyer_weight = 0.0
        self.hoyer_value = 0.0
        self.rate = 0.0

    @property
    def threshold(self) -> float:
        return float(self.v_th.data[0])

    def forward(self, x, train=False):
        self._u = x
        s = spike_forward(x, self.threshold)
        self.rate = float(s.mean())
        if train and self.hoyer_weight > 0:
            self.hoyer_value, self._hoyer_grad = hoyer_regularizer(x)
        else:
            self.hoyer_value, self._hoyer_grad = 0.0, None
        return s.astype(DTYPE, copy=False) if train else s

    def backward(self, g):
        gu, gth = spike_backward(g, self._u, self.threshold, self.width)
        if self._hoyer_grad is not None:
            gu = gu + (self.hoyer_weight * self._hoyer_grad).astype(gu.dtype)
        if self.trainable:
            self.v_th.accumulate(np.array([gth]))
        return gu

    def params(self):
        return [self.v_th] if self.trainable else []

    def buffers(self):
        return [] if self.trainable else [self.v_th]


class MaxPool2d(Layer):
    def __init__(self, window):
        self.window = window

    def forward(self, x, train=False):
        self._x = x
        return maxpool2d(x, self.window)

    def backward(self, g):
        return maxpool2d_backward(g, self._x, self.window)


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense(Layer):
    def __init__(self, d_in, d_out, rng=None, name="fc"):
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)), name=f"{name}.weight")
        self.bias = Tensor(np.zeros(d_out), name=f"{name}.bias")
        self.name = name
        self.last_input_rate = 0.0

    def forward(self, x, train=False):
        self._x = x
        self.last_input_rate = float(x.mean())
        return dense(x, self.weight.data, self.bias.data)

    def backward(self, g):
        gx, gw, gb = dense_backward(g, self._x, self.weight.data)
        self.weight.accumulate(gw)
        self.bias.accumulate(gb)
        return gx

    def params(self):
        return [self.weight, self.bias]

    def macs(self, out_hw=None) -> int:
        return int(np.prod(self.weight.shape))


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]

    def walk(self):
        for layer in self.layers:
            if hasattr(layer, "walk"):
                yield from layer.walk()
            else:
                yield layer


class FirstBlock(Sequential):
    """conv -> BN -> spike -> pool; inference runs in float64 so fused and
    digital evaluation make identical threshold decisions."""

    def __init__(self, conv: Conv2d, bn: BatchNorm2d, spike: Spike, pool: int):
        layers = [conv, bn, spike] + ([MaxPool2d(pool)] if pool > 1 else [])
        super().__init__(layers)
        self.conv, self.bn, self.spike, self.pool = conv, bn, spike, pool

    def forward(self, x, train=False):
        if not train:
            x = np.asarray(x, dtype=np.float64)
        return super().forward(x, train).astype(DTYPE, copy=False)

    def fuse(self, fcfg: "FrontendConfig") -> "InSensorBlock":
        fe = af.fuse_bn(self.conv.weight.data, self.bn.bn_params(), self.spike.threshold,
                        curve=fcfg.curve_model(), stride=self.conv.stride,
                        padding=self.conv.padding, pool_window=self.pool,
                        quant_bits=fcfg.quant_bits, noise_sigma=fcfg.noise_sigma)
        return InSensorBlock(fe, seed=fcfg.noise_seed)


class InSensorBlock(Layer):
    """First layer evaluated by the analog front-end model (not trainable)."""

    def __init__(self, frontend: af.FusedFrontend, seed: int = 0):
        self.frontend = frontend
        self.rng = np.random.default_rng(seed)
        self.rate = 0.0
        self.out_hw = (0, 0)
        self.prepool_outputs = 0

    def forward(self, x, train=False):
        out, pre = af.frontend_forward(x, self.frontend, rng=self.rng, return_prepool=True)
        self.rate = float(out.mean())
        self.out_hw = pre.shape[-2:]
        return out.astype(DTYPE)

    def backward(self, g):
        return None

    def macs(self, out_hw=None) -> int:
        c_out, c_in, kh, kw = self.frontend.banks.positive.shape
        ho, wo = self.out_hw if out_hw is None else out_hw
        return c_out * c_in * kh * kw * ho * wo

    def walk(self):
        yield self


class ResidualBlock(Layer):
    """Two conv/BN/spike stages joined with the shortcut by binary OR (a+b-ab)."""

    def __init__(self, c_in, c_out, stride, act, bn_kw, pool, rng, name):
        self.main = Sequential([
            Conv2d(c_in, c_out, 3, stride, 1, rng, f"{name}.conv1"),
            BatchNorm2d(c_out, name=f"{name}.bn1", **bn_kw),
            Spike(copy.copy(act), f"{name}.spike1"),
            Conv2d(c_out, c_out, 3, 1, 1, rng, f"{name}.conv2"),
            BatchNorm2d(c_out, name=f"{name}.bn2", **bn_kw),
            Spike(copy.copy(act), f"{name}.spike2"),
        ])
        if stride != 1 or c_in != c_out:
            self.short = Sequential([
                Conv2d(c_in, c_out, 1, stride, 0, rng, f"{name}.down"),
                BatchNorm2d(c_out, name=f"{name}.down_bn", **bn_kw),
                Spike(copy.copy(act), f"{name}.down_spike"),
            ])
        else:
            self.short = None
        self.pool = MaxPool2d(pool) if pool > 1 else None

    def forward(self, x, train=False):
        a = self.main.forward(x, train)
        b = x if self.short is None else self.short.forward(x, train)
        self._a, self._b = a, b
        y = a + b - a * b
        return self.pool.forward(y, train) if self.pool else y

    def backward(self, g):
        if self.pool:
            g = self.pool.backward(g)
        ga = self.main.backward(g * (1 - self._b))
        gb = g * (1 - self._a)
        if self.short is not None:
            gb = self.short.backward(gb)
        return ga + gb

    def params(self):
        return self.main.params() + (self.short.params() if self.short else [])

    def buffers(self):
        return self.main.buffers() + (self.short.buffers() if self.short else [])

    def walk(self):
        yield from self.main.walk()
        if self.short is not None:
            yield from self.short.walk()
        if self.pool:
            yield self.pool


# ---------------------------------------------------------------------- config

@dataclass
class LayerSpec:
    kind: str = "conv"  # conv | res
    channels: int = 16
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 1


@dataclass
class FrontendConfig:
    curve: dict = field(default_factory=lambda: {"family": "ideal"})
    quant_bits: Optional[int] = 4
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def curve_model(self) -> af.CurveModel:
        d = dict(self.curve)
        if d.get("family") == "saturating" and not d.get("coefficients"):
            return af.CurveModel.saturating(d.get("v_max", af.DEFAULT_V_MAX), d.get("k", af.DEFAULT_K))
        d.setdefault("coefficients", [])
        return af.CurveModel.from_dict(d)


@dataclass
class NetworkConfig:
    input_shape: tuple = (3, 32, 32)
    num_classes: int = 10
    layers: list = field(default_factory=list)
    first_layer_mode: str = "digital"  # digital | in_sensor
    v_th: float = 1.0
    surrogate_width: float = 1.0
    train_threshold: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    frontend: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        if isinstance(self.frontend, dict):
            self.frontend = FrontendConfig(**self.frontend)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)

    def block_shapes(self) -> list:
        """Output shape ``(C, H, W)`` of every block; raises ConfigError on mismatch."""
        if self.first_layer_mode not in ("digital", "in_sensor"):
            raise ConfigError(f"first_layer_mode must be digital or in_sensor, got {self.first_layer_mode!r}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if self.layers[0].kind != "conv":
            raise ConfigError("layer 0 (first layer) must be a conv block")
        c, h, w = self.input_shape
        shapes = []
        for i, spec in enumerate(self.layers):
            where = f"layer {i} ({spec.kind}, {spec.channels} ch)"
            if spec.kind not in ("conv", "res"):
                raise ConfigError(f"{where}: unknown kind {spec.kind!r}")
            if spec.channels < 1 or spec.stride < 1 or spec.pool < 1 or spec.kernel < 1:
                raise ConfigError(f"{where}: channels, kernel, stride and pool must be >= 1")
            if spec.kind == "conv":
                k, p = spec.kernel, spec.padding
            else:
                k, p = 3, 1
            if k > h + 2 * p or k > w + 2 * p:
                raise ConfigError(f"{where}: kernel {k} exceeds padded input {h}x{w}")
            h = conv_output_size(h, k, spec.stride, p)
            w = conv_output_size(w, k, spec.stride, p)
            if spec.pool > h or spec.pool > w:
                raise ConfigError(f"{where}: pool {spec.pool} exceeds feature map {h}x{w}")
            h, w, c = h // spec.pool, w // spec.pool, spec.channels
            shapes.append((c, h, w))
        return shapes


def vgg6_lite(first_channels=16, input_shape=(3, 32, 32), num_classes=10, width=1.0, **kw):
    """Six conv blocks (<=128 ch); strided, pooled first layer for bandwidth reduction."""
    ch = [max(1, int(round(c * width))) for c in (32, 32, 64, 64, 128)]
    layers = [LayerSpec("conv", first_channels, 3, 2, 1, 2),
              LayerSpec("conv", ch[0]), LayerSpec("conv", ch[1], pool=2),
              LayerSpec("conv", ch[2]), LayerSpec("conv", ch[3], pool=2),
              LayerSpec("conv", ch[4])]
    return NetworkConfig(input_shape, num_classes, layers, **kw)


def resnet8_lite(first_channels=16, input_shape=(3, 32, 32), num_classes=10, **kw):
    layers = [LayerSpec("conv", first_channels, 3, 2, 1, 2),
              LayerSpec("res", 32), LayerSpec("res", 64, stride=2), LayerSpec("res", 128, stride=2)]
    return NetworkConfig(input_shape, num_classes, layers, **kw)


def minimal(first_channels=8, input_shape=(3, 32, 32), num_classes=10, **kw):
    """conv-BN-spike-pool followed directly by the dense head."""
    return NetworkConfig(input_shape, num_classes,
                         [LayerSpec("conv", first_channels, 3, 2, 1, 2)], **kw)


PRESETS = {"vgg6_lite": vgg6_lite, "resnet8_lite": resnet8_lite, "minimal": minimal}


# --------------------------------------------------------------------- network

class Network:
    def __init__(self, cfg: NetworkConfig, blocks, head: Dense):
        self.cfg = cfg
        self.blocks = blocks
        self.flatten = Flatten()
        self.head = head
        self.block_outputs: list = []

    @property
    def in_sensor(self) -> bool:
        return isinstance(self.blocks[0], InSensorBlock)

    def forward(self, x, train: bool = False):
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.cfg.input_shape:
            raise DimensionError(f"input {x.shape[1:]} does not match network input {self.cfg.input_shape}")
        outs = []
        for block in self.blocks:
            x = block.forward(x, train)
            outs.append(x)
        self.block_outputs = outs
        return self.head.forward(self.flatten.forward(x, train), train)

    __call__ = forward

    def backward(self, grad_logits, block_grads: Optional[dict] = None):
        """Backpropagate; ``block_grads`` adds extra gradients at block outputs."""
        block_grads = block_grads or {}
        g = self.flatten.backward(self.head.backward(grad_logits))
        for i in range(len(self.blocks) - 1, -1, -1):
            if i in block_grads:
                g = g + block_grads[i]
            if isinstance(self.blocks[i], InSensorBlock):
                break
            g = self.blocks[i].backward(g)
        return g

    def params(self):
        ps = [p for b in self.blocks if not isinstance(b, InSensorBlock) for p in b.params()]
        return ps + self.head.params()

    def buffers(self):
        return [t for b in self.blocks if not isinstance(b, InSensorBlock) for t in b.buffers()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def layers(self):
        for b in self.blocks:
            yield from b.walk()
        yield self.head

    def spike_layers(self):
        return [l for l in self.layers() if isinstance(l, Spike)]

    def set_hoyer(self, weight: float):
        for s in self.spike_layers():
            s.hoyer_weight = weight

    def hoyer_value(self) -> float:
        return sum(s.hoyer_weight * s.hoyer_value for s in self.spike_layers())

    def mean_spike_rate(self) -> float:
        rates = [l.rate for l in self.layers() if isinstance(l, (Spike, InSensorBlock))]
        return float(np.mean(rates)) if rates else 0.0

    def state_dict(self) -> dict:
        return {t.name: t.data for t in self.params() + self.buffers()}

    def load_state_dict(self, state: dict):
        own = {t.name: t for t in self.params() + self.buffers()}
        missing = sorted(set(own) - set(state))
        if missing:
            raise DimensionError(f"checkpoint lacks tensors: {', '.join(missing[:5])}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"tensor {name}: checkpoint shape {arr.shape} != network shape {t.shape}")
            t.data = np.array(arr, dtype=DTYPE)

    def first_block(self) -> FirstBlock:
        if not isinstance(self.blocks[0], FirstBlock):
            raise ConfigError("network is already in-sensor")
        return self.blocks[0]

    def to_in_sensor(self, fcfg: Optional[FrontendConfig] = None) -> "Network":
        """Copy of this network with block 0 replaced by its fused front-end."""
        fcfg = self.cfg.frontend if fcfg is None else fcfg
        new = copy.deepcopy(self)
        new.cfg = copy.deepcopy(self.cfg)
        new.cfg.first_layer_mode = "in_sensor"
        new.cfg.frontend = fcfg
        new.blocks[0] = self.first_block().fuse(fcfg)
        return new


def build_network(cfg: NetworkConfig, seed: int = 0) -> Network:
    shapes = cfg.block_shapes()
    rng = np.random.default_rng(seed)
    act = SpikingActivation(cfg.v_th, cfg.surrogate_width, cfg.train_threshold)
    bn_kw = {"momentum": cfg.bn_momentum, "eps": cfg.bn_eps}
    blocks = []
    c_in = cfg.input_shape[0]
    for i, spec in enumerate(cfg.layers):
        name = f"b{i}"
        if i == 0:
            blocks.append(FirstBlock(
                Conv2d(c_in, spec.channels, spec.kernel, spec.stride, spec.padding, rng, f"{name}.conv"),
                BatchNorm2d(spec.channels, name=f"{name}.bn", **bn_kw),
                Spike(copy.copy(act), f"{name}.spike"), spec.pool))
        elif spec.kind == "conv":
            layers = [Conv2d(c_in, spec.channels, spec.kernel, spec.stride, spec.padding, rng, f"{name}.conv"),
                      BatchNorm2d(spec.channels, name=f"{name}.bn", **bn_kw),
                      Spike(copy.copy(act), f"{name}.spike")]
            if spec.pool > 1:
                layers.append(MaxPool2d(spec.pool))
            blocks.append(Sequential(layers))
        else:
            blocks.append(ResidualBlock(c_in, spec.channels, spec.stride, act, bn_kw, spec.pool, rng, name))
        c_in = spec.channels
    c, h, w = shapes[-1]
    net = Network(cfg, blocks, Dense(c * h * w, cfg.num_classes, rng, "head"))
    if cfg.first_layer_mode == "in_sensor":
        net.blocks[0] = net.blocks[0].fuse(cfg.frontend)
    return net


# ------------------------------------------------------------ inference/profile

def inference(net: Network, image) -> np.ndarray:
    """Logits from one forward pass (single time step)."""
    x = np.asarray(image, dtype=DTYPE)
    logits = net.forward(x, train=False)
    return logits[0] if np.ndim(image) == 3 else logits


@dataclass
class LayerProfile:
    name: str
    op_kind: str  # MAC | AC
    ops: int  # per image
    reads: int  # per image: input elements + weight elements
    rate: float  # mean input activity in [0, 1]; 1 for analog input


@dataclass
class SparsityProfile:
    layers: list
    spike_rates: dict
    first_layer_in_sensor: bool
    in_shape: tuple
    first_out_shape: tuple  # (C, H, W) leaving block 0
    first_prepool_outputs: int  # comparator/CDS decisions per image in block 0

    def __post_init__(self):
        for lp in self.layers:
            if not 0.0 <= lp.rate <= 1.0:
                raise ParameterError(f"{lp.name}: rate {lp.rate} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def sparsity_profile(net: Network, images, batch_size: int = 64) -> SparsityProfile:
    """Average activity and per-image op counts of every compute layer."""
    x = np.asarray(images, dtype=DTYPE)
    if x.ndim == 3:
        x = x[None]
    computes = [l for l in net.layers() if isinstance(l, (Conv2d, Dense, InSensorBlock))]
    spikes = net.spike_layers()
    sums = np.zeros(len(computes))
    srates = np.zeros(len(spikes))
    n = 0
    for start in range(0, len(x), batch_size):
        xb = x[start:start + batch_size]
        net.forward(xb, train=False)
        m = len(xb)
        for i, l in enumerate(computes):
            sums[i] += (1.0 if i == 0 else getattr(l, "last_input_rate", 1.0)) * m
        for i, s in enumerate(spikes):
            srates[i] += s.rate * m
        n += m
    first_out = tuple(net.block_outputs[0].shape[1:])
    layers = []
    for i, l in enumerate(computes):
        if isinstance(l, InSensorBlock):
            name, reads = "frontend", 0
        else:
            name = l.name
            w_elems = int(np.prod(l.weight.shape))
            in_elems = int(np.prod(l._x.shape[1:]))
            reads = in_elems + w_elems
        layers.append(LayerProfile(name, "MAC" if i == 0 else "AC", int(l.macs()), reads,
                                   float(min(1.0, max(0.0, sums[i] / n)))))
    first = net.blocks[0]
    if isinstance(first, InSensorBlock):
        pre = first.frontend.out_channels * int(np.prod(first.out_hw))
        rates = {"frontend": first.rate}
    else:
        pre = first.conv.weight.shape[0] * int(np.prod(first.conv.out_hw))
        rates = {}
    for i, s in enumerate(spikes):
        rates[s.v_th.name.rsplit(".", 1)[0]] = float(srates[i] / n)
    return SparsityProfile(layers, rates, net.in_sensor, tuple(net.cfg.input_shape), first_out, pre)
