"""Paired experiments shared by the scripts and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datasets import Dataset
from .snn import FrontendConfig, Network, NetworkConfig, build_network, vgg6_lite
from .training import Hyperparams, KDConfig, accuracy, distill, train

log = logging.getLogger(__name__)


@dataclass
class KDRun:
    seed: int
    teacher: float
    student_kd: float
    student_plain: float


@dataclass
class KDDirection:
    runs: list = field(default_factory=list)

    def mean(self, key: str) -> float:
        return float(np.mean([getattr(r, key) for r in self.runs]))

    @property
    def kd_helps(self) -> bool:
        return self.mean("student_kd") >= self.mean("student_plain")

    @property
    def reduction_hurts(self) -> bool:
        return self.mean("student_plain") <= self.mean("teacher")

    def to_dict(self) -> dict:
        return {"runs": [asdict(r) for r in self.runs],
                "mean_teacher": self.mean("teacher"),
                "mean_student_kd": self.mean("student_kd"),
                "mean_student_plain": self.mean("student_plain")}


def kd_direction(train_set: Dataset, test_set: Dataset, seeds=(0, 1, 2),
                 teacher_channels: int = 16, student_channels: int = 4,
                 hp: Hyperparams | None = None, kd: KDConfig | None = None) -> KDDirection:
    """Teacher vs reduced-channel student, with and without KD, per seed.

    Student with and without KD share one initialisation and one batch order.
    """
    hp = hp or Hyperparams()
    kd = kd or KDConfig()
    shape, classes = train_set.shape, int(max(train_set.num_classes, test_set.num_classes))
    out = KDDirection()
    for seed in seeds:
        h = replace(hp, seed=seed)
        teacher = build_network(vgg6_lite(teacher_channels, shape, classes), seed)
        train(teacher, train_set, h)
        t_acc = accuracy(teacher, test_set)
        res = distill(teacher, vgg6_lite(student_channels, shape, classes), train_set, kd, h,
                      compare=True, init_seed=seed + 1000)
        run = KDRun(seed, t_acc, accuracy(res.student, test_set), accuracy(res.plain_student, test_set))
        log.info("kd seed %d: %s", seed, run)
        out.runs.append(run)
    return out


@dataclass
class CurveDrop:
    digital: float
    ideal: float
    saturating: float

    @property
    def drop_points(self) -> float:
        return 100.0 * (self.ideal - self.saturating)


def curve_drop(net: Network, test_set: Dataset, quant_bits: int | None = 4,
               curve: dict | None = None) -> CurveDrop:
    """Accuracy of one trained network: digital, in-sensor ideal, in-sensor saturating."""
    ideal = net.to_in_sensor(FrontendConfig({"family": "ideal"}, quant_bits))
    sat = net.to_in_sensor(FrontendConfig(curve or {"family": "saturating"}, quant_bits))
    return CurveDrop(accuracy(net, test_set), accuracy(ideal, test_set), accuracy(sat, test_set))


def train_reference(cfg: NetworkConfig, train_set: Dataset, hp: Hyperparams, seed: int = 0) -> Network:
    net = build_network(cfg, seed)
    train(net, train_set, replace(hp, seed=seed))
    return net
