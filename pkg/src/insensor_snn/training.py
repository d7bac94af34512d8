"""Supervised training and knowledge distillation for one-time-step SNNs."""

from __future__ import annotations

import contextlib
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .datasets import Dataset
from .numerics import (
    SGD,
    DTYPE,
    DimensionError,
    ParameterError,
    Tensor,
    TrainingError,
    clip_grad_norm,
    conv2d,
    conv2d_backward,
    deterministic,
    softmax_cross_entropy,
)
from .snn import Network, NetworkConfig, build_network

log = logging.getLogger(__name__)


@dataclass
class Hyperparams:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lambda_hoyer: float = 1e-8
    schedule: str = "cosine"  # cosine | constant
    hflip: bool = False
    seed: int = 0
    deterministic: bool = True
    eval_batch_size: int = 256
    grad_clip: Optional[float] = 5.0  # joint gradient L2 norm cap; None disables

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch sizes >= 1")
        if self.lr < 0 or self.weight_decay < 0 or self.lambda_hoyer < 0:
            raise ParameterError("lr, weight_decay and lambda_hoyer must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ParameterError("grad_clip must be positive or None")
        if self.schedule not in ("cosine", "constant"):
            raise ParameterError(f"schedule must be cosine or constant, got {self.schedule!r}")


@dataclass
class MetricRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    mean_spike_rate: float

    def csv(self) -> str:
        return f"{self.epoch},{self.split},{self.loss:.6f},{self.accuracy:.6f},{self.mean_spike_rate:.6f}"


CSV_HEADER = "epoch,split,loss,accuracy,mean_spike_rate"


def metrics_csv(rows) -> str:
    return "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"


@dataclass
class TrainResult:
    net: Network
    history: list
    best_accuracy: float
    best_state: dict


def _lr_at(hp: Hyperparams, epoch: int) -> float:
    if hp.schedule == "constant" or hp.epochs <= 1:
        return hp.lr
    return 0.5 * hp.lr * (1.0 + math.cos(math.pi * epoch / hp.epochs))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _augment(x: np.ndarray, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    if not hp.hflip:
        return x
    flip = rng.random(len(x)) < 0.5
    x = x.copy()
    x[flip] = x[flip, :, :, ::-1]
    return x


def _check_finite(value, epoch: int, batch: int):
    if not np.all(np.isfinite(value)):
        raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch}")


def evaluate(net: Network, data: Dataset, batch_size: int = 256):
    """Returns ``(loss, accuracy, mean_spike_rate)`` in inference mode."""
    tot_loss = correct = 0.0
    rate = 0.0
    n = len(data)
    for start in range(0, n, batch_size):
        xb = data.images[start:start + batch_size]
        yb = data.labels[start:start + batch_size]
        z = net.forward(xb, train=False)
        loss, _ = softmax_cross_entropy(z, yb)
        tot_loss += loss * len(xb)
        correct += float((z.argmax(axis=1) == yb).sum())
        rate += net.mean_spike_rate() * len(xb)
    return tot_loss / n, correct / n, rate / n


def accuracy(net: Network, data: Dataset, batch_size: int = 256) -> float:
    return evaluate(net, data, batch_size)[1]


def train(net: Network, data: Dataset, hp: Hyperparams, eval_set: Optional[Dataset] = None,
          on_best: Optional[Callable[[dict, float], None]] = None,
          step_fn: Optional[Callable] = None) -> TrainResult:
    """Shuffled mini-batch momentum SGD on cross-entropy (+ Hoyer term).

    ``step_fn(xb, yb)`` may replace the default per-batch loss/backward; it must
    return ``(loss, logits)`` after accumulating gradients.
    """
    if len(data) == 0:
        raise ParameterError("training set is empty")
    extra = getattr(step_fn, "params", [])
    opt = SGD(net.params() + list(extra), hp.lr, hp.momentum, hp.weight_decay)
    rng = np.random.default_rng(hp.seed)
    net.set_hoyer(hp.lambda_hoyer)
    history = []
    best_acc, best_state = -1.0, {}
    ctx = deterministic() if hp.deterministic else contextlib.nullcontext()
    with ctx:
        for epoch in range(hp.epochs):
            opt.lr = _lr_at(hp, epoch)
            tot_loss = correct = rate = 0.0
            seen = 0
            for b, idx in enumerate(_batches(len(data), hp.batch_size, rng)):
                xb = _augment(data.images[idx], hp, rng)
                yb = data.labels[idx]
                opt.zero_grad()
                if step_fn is None:
                    z = net.forward(xb, train=True)
                    loss, g = softmax_cross_entropy(z, yb)
                    loss += net.hoyer_value()
                    _check_finite(loss, epoch, b)
                    net.backward(g)
                else:
                    loss, z = step_fn(xb, yb)
                    _check_finite(loss, epoch, b)
                if hp.grad_clip is not None:
                    clip_grad_norm(opt.params, hp.grad_clip)
                try:
                    opt.step()
                except TrainingError as exc:
                    raise TrainingError(f"{exc} (epoch {epoch}, batch {b})") from exc
                tot_loss += loss * len(idx)
                correct += float((z.argmax(axis=1) == yb).sum())
                rate += net.mean_spike_rate() * len(idx)
                seen += len(idx)
            history.append(MetricRow(epoch, "train", tot_loss / seen, correct / seen, rate / seen))
            if eval_set is not None:
                ev = evaluate(net, eval_set, hp.eval_batch_size)
                history.append(MetricRow(epoch, "test", *ev))
                acc = ev[1]
            else:
                acc = correct / seen
            log.info("epoch %d: %s", epoch, history[-1])
            if acc > best_acc:
                best_acc = acc
                best_state = {k: v.copy() for k, v in net.state_dict().items()}
                if on_best is not None:
                    on_best(best_state, best_acc)
    net.set_hoyer(0.0)
    return TrainResult(net, history, best_acc, best_state)


# ------------------------------------------------------------------------- KD

@dataclass
class KDConfig:
    lambda_logit: float = 1.0
    lambda_act: float = 0.5
    matched_blocks: Optional[list] = None  # None: every block
    normalize: bool = True

    def __post_init__(self):
        if self.lambda_logit < 0 or self.lambda_act < 0:
            raise ParameterError("KD weights must be non-negative")


def adapter_1x1(student_map, adapter_weights) -> np.ndarray:
    """Lift ``[C_s, H, W]`` (or batched) to ``[C_t, H, W]`` with a 1x1 convolution."""
    w = np.asarray(adapter_weights)
    if w.ndim != 4 or w.shape[2:] != (1, 1):
        raise DimensionError(f"adapter weights must be [C_t, C_s, 1, 1], got {w.shape}")
    return conv2d(student_map, w, 1, 0)


class Adapter:
    def __init__(self, c_s: int, c_t: int, rng: np.random.Generator, name: str = "adapter"):
        w = rng.normal(0.0, np.sqrt(1.0 / c_s), size=(c_t, c_s, 1, 1))
        self.weight = Tensor(w, name=f"{name}.weight")

    def forward(self, x):
        self._x = x
        return adapter_1x1(x, self.weight.data)

    def backward(self, g):
        gx, gw = conv2d_backward(g, self._x, self.weight.data, 1, 0)
        self.weight.accumulate(gw)
        return gx

    def params(self):
        return [self.weight]


_NORM_EPS = 1e-8


def _normalize_rows(v: np.ndarray):
    norm = np.sqrt((v.astype(np.float64) ** 2).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, _NORM_EPS)
    return v / norm, norm


def map_distance(s_map, t_map, normalize: bool = True):
    """``mean((s_hat - t_hat)^2)`` with per-sample L2 normalisation; returns (value, grad_s)."""
    s = np.asarray(s_map, dtype=np.float64)
    t = np.asarray(t_map, dtype=np.float64)
    if s.shape != t.shape:
        raise DimensionError(f"activation maps differ after adapter: {s.shape} vs {t.shape}")
    n = s.shape[0] if s.ndim == 4 else 1
    s2 = s.reshape(n, -1)
    t2 = t.reshape(n, -1)
    if normalize:
        sh, s_norm = _normalize_rows(s2)
        th, _ = _normalize_rows(t2)
    else:
        sh, th = s2, t2
    diff = sh - th
    value = float(np.mean(diff ** 2))
    g_hat = 2.0 * diff / diff.size
    if normalize:
        clipped = s_norm <= _NORM_EPS
        proj = (sh * g_hat).sum(axis=1, keepdims=True)
        g = np.where(clipped, g_hat, g_hat - sh * proj) / s_norm
    else:
        g = g_hat
    return value, g.reshape(s.shape)


@dataclass
class KDLoss:
    value: float
    grad_logits: np.ndarray
    grad_maps: list
    terms: dict


def kd_loss(student_logits, teacher_logits, student_maps, teacher_maps, labels,
            cfg: KDConfig) -> KDLoss:
    """CE + lambda_logit * mean((z_s - z_t)^2) + lambda_act * sum_b map_distance.

    Teacher inputs are treated as constants.  ``student_maps`` are post-adapter.
    """
    if len(student_maps) != len(teacher_maps):
        raise DimensionError("student and teacher map lists differ in length")
    ce, g = softmax_cross_entropy(student_logits, labels)
    zs = np.asarray(student_logits, dtype=np.float64)
    zt = np.asarray(teacher_logits, dtype=np.float64)
    if zs.shape != zt.shape:
        raise DimensionError(f"logit shapes differ: {zs.shape} vs {zt.shape}")
    logit_term = float(np.mean((zs - zt) ** 2))
    g = g + cfg.lambda_logit * 2.0 * (zs - zt) / zs.size
    act_term = 0.0
    grads = []
    for sm, tm in zip(student_maps, teacher_maps):
        v, gm = map_distance(sm, tm, cfg.normalize)
        act_term += v
        grads.append(cfg.lambda_act * gm)
    total = ce + cfg.lambda_logit * logit_term + cfg.lambda_act * act_term
    return KDLoss(total, g.astype(DTYPE), grads,
                  {"ce": ce, "logit": logit_term, "act": act_term})


@dataclass
class DistillResult:
    student: Network
    adapters: dict
    history: list
    accuracy_kd: float
    accuracy_plain: Optional[float] = None
    plain_student: Optional[Network] = None
    plain_history: list = field(default_factory=list)


def _block_channels(net: Network) -> list:
    return [c for c, _, _ in net.cfg.block_shapes()]


def make_kd_step(teacher: Network, student: Network, kd: KDConfig, seed: int = 0):
    """Per-batch loss/backward closure for :func:`train`; carries the adapters."""
    t_shapes = teacher.cfg.block_shapes()
    s_shapes = student.cfg.block_shapes()
    blocks = list(range(min(len(t_shapes), len(s_shapes)))) if kd.matched_blocks is None else list(kd.matched_blocks)
    rng = np.random.default_rng(seed + 7919)
    adapters = {}
    for b in blocks:
        if b >= len(t_shapes) or b >= len(s_shapes):
            raise DimensionError(f"matched block {b} missing in teacher or student")
        (cs, hs, ws), (ct, ht, wt) = s_shapes[b], t_shapes[b]
        if (hs, ws) != (ht, wt):
            raise DimensionError(f"block {b}: spatial dims differ ({hs}x{ws} vs {ht}x{wt})")
        if cs != ct:
            adapters[b] = Adapter(cs, ct, rng, f"adapter{b}")
    use_maps = kd.lambda_act > 0

    def step(xb, yb):
        t_logits = teacher.forward(xb, train=False)
        t_maps = [teacher.block_outputs[b] for b in blocks]
        z = student.forward(xb, train=True)
        s_maps = []
        for b in blocks:
            m = student.block_outputs[b]
            s_maps.append(adapters[b].forward(m) if b in adapters else m)
        res = kd_loss(z, t_logits, s_maps if use_maps else [], t_maps if use_maps else [], yb, kd)
        block_grads = {}
        for b, gm in zip(blocks, res.grad_maps):
            gm = gm.astype(DTYPE)
            block_grads[b] = adapters[b].backward(gm) if b in adapters else gm
        student.backward(res.grad_logits, block_grads)
        step.terms.append(res.terms)
        return res.value + student.hoyer_value(), z

    step.params = [p for a in adapters.values() for p in a.params()]
    step.adapters = adapters
    step.terms = []  # per-batch loss terms, in training order
    return step


def distill(teacher: Network, student_cfg: NetworkConfig, data: Dataset, kd: KDConfig,
            hp: Hyperparams, eval_set: Optional[Dataset] = None, compare: bool = True,
            init_seed: Optional[int] = None) -> DistillResult:
    """Train a student under KD from a frozen teacher.

    With ``compare`` the same student initialisation is also trained without
    the KD terms so both accuracies are reported side by side.
    """
    t_first = _block_channels(teacher)[0]
    s_first = student_cfg.block_shapes()[0][0]
    if s_first > t_first:
        raise ParameterError(f"student first layer ({s_first} ch) wider than teacher ({t_first} ch)")
    seed = hp.seed if init_seed is None else init_seed
    student = build_network(student_cfg, seed)
    plain = copy.deepcopy(student) if compare else None
    step = make_kd_step(teacher, student, kd, seed)
    res = train(student, data, hp, eval_set, step_fn=step)
    ref = eval_set if eval_set is not None else data
    out = DistillResult(student, step.adapters, res.history, accuracy(student, ref))
    if compare:
        pres = train(plain, data, hp, eval_set)
        out.accuracy_plain = accuracy(plain, ref)
        out.plain_student = plain
        out.plain_history = pres.history
    return out
