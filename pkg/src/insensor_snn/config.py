"""Experiment configuration: one YAML file, validated with line-numbered errors."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .snn import PRESETS, FrontendConfig, LayerSpec, NetworkConfig
from .training import Hyperparams, KDConfig


class ConfigFileError(ValueError):
    """Invalid experiment configuration file."""


def _compose(text: str, source: str):
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 0
        raise ConfigFileError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    return node


def _to_python(node, lines: dict, path: str = ""):
    """Convert a composed YAML node, recording the line of every key path."""
    if node is None:
        return None
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            lines[sub] = k.start_mark.line + 1
            out[key] = _to_python(v, lines, sub)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, lines, f"{path}[{i}]") for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


@dataclass
class DatasetSpec:
    name: str = "cifar10"  # cifar10 | mnist | digits
    path: Optional[str] = None
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    seed: int = 0


@dataclass
class EnergySpec:
    params: Optional[str] = None  # None: shipped illustrative preset
    n_im: int = 12
    bayer: bool = True
    sample: int = 64


@dataclass
class ExperimentConfig:
    seed: int
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    student: Optional[NetworkConfig] = None
    training: Hyperparams = field(default_factory=Hyperparams)
    kd: KDConfig = field(default_factory=KDConfig)
    teacher_checkpoint: Optional[str] = None
    energy: EnergySpec = field(default_factory=EnergySpec)
    compression: Optional[dict] = None
    output_dir: str = "runs/default"


DEFAULT_SHAPES = {"cifar10": ((3, 32, 32), 10), "mnist": ((1, 28, 28), 10), "digits": ((1, 16, 16), 10)}


class _Checker:
    def __init__(self, source: str, lines: dict):
        self.source, self.lines = source, lines

    def fail(self, path: str, msg: str):
        line = self.lines.get(path)
        while line is None and "." in path:
            path = path.rsplit(".", 1)[0]
            line = self.lines.get(path)
        raise ConfigFileError(f"{self.source}:{line or 0}: {msg}")

    def keys(self, d: Any, allowed, path: str):
        if d is None:
            return {}
        if not isinstance(d, dict):
            self.fail(path, f"'{path}' must be a mapping")
        for k in d:
            if k not in allowed:
                self.fail(f"{path}.{k}" if path else k,
                          f"unknown key '{k}'" + (f" in '{path}'" if path else "")
                          + f"; expected one of: {', '.join(sorted(allowed))}")
        return d

    def build(self, cls, d, path, extra=()):
        names = {f.name for f in fields(cls)}
        d = self.keys(d, names | set(extra), path)
        try:
            return cls(**{k: v for k, v in d.items() if k in names})
        except (TypeError, ValueError) as exc:
            self.fail(path, f"invalid '{path}': {exc}")


def _network(ck: _Checker, d: Optional[dict], path: str, ds: DatasetSpec) -> NetworkConfig:
    d = dict(ck.keys(d or {}, {f.name for f in fields(NetworkConfig)} | {"preset", "first_channels", "width"}, path))
    shape, classes = DEFAULT_SHAPES.get(ds.name, ((3, 32, 32), 10))
    d.setdefault("input_shape", shape)
    d.setdefault("num_classes", classes)
    if "frontend" in d:
        d["frontend"] = ck.build(FrontendConfig, d["frontend"], f"{path}.frontend")
    preset = d.pop("preset", None if "layers" in d else "vgg6_lite")
    first = d.pop("first_channels", None)
    width = d.pop("width", None)
    try:
        if preset is not None:
            if preset not in PRESETS:
                ck.fail(f"{path}.preset", f"unknown preset '{preset}'; choose from {', '.join(PRESETS)}")
            if "layers" in d:
                ck.fail(f"{path}.layers", "give either 'preset' or 'layers', not both")
            kw = {"first_channels": first} if first is not None else {}
            if width is not None:
                kw["width"] = width
            base = PRESETS[preset](input_shape=tuple(d.pop("input_shape")), num_classes=d.pop("num_classes"), **kw)
            d["layers"] = base.layers
            d["input_shape"], d["num_classes"] = base.input_shape, base.num_classes
        else:
            layers = d.get("layers") or []
            for i, l in enumerate(layers):
                ck.keys(l, {f.name for f in fields(LayerSpec)}, f"{path}.layers[{i}]")
            if first is not None and layers:
                layers[0] = dict(layers[0], channels=first)
        cfg = NetworkConfig(**d)
        cfg.block_shapes()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigFileError):
            raise
        ck.fail(path, f"invalid '{path}': {exc}")
    return cfg


TOP_KEYS = {"seed", "dataset", "network", "student", "training", "kd", "teacher_checkpoint",
            "energy", "compression", "output_dir"}


def parse_config(text: str, source: str = "<config>", base_dir: Optional[Path] = None,
                 seed: Optional[int] = None) -> ExperimentConfig:
    lines: dict = {}
    raw = _to_python(_compose(text, source), lines) or {}
    ck = _Checker(source, lines)
    ck.keys(raw, TOP_KEYS, "")
    if seed is None:
        seed = raw.get("seed")
    if seed is None:
        raise ConfigFileError(f"{source}:1: 'seed' is mandatory (set it in the file or pass --seed)")
    if not isinstance(seed, int):
        ck.fail("seed", "'seed' must be an integer")
    ds = ck.build(DatasetSpec, raw.get("dataset"), "dataset")
    if ds.name not in DEFAULT_SHAPES:
        ck.fail("dataset.name", f"unknown dataset '{ds.name}'; choose cifar10, mnist or digits")
    base_dir = Path(base_dir) if base_dir else Path.cwd()

    def resolve(p: Optional[str], path: str, must_exist: bool = True) -> Optional[str]:
        if p is None:
            return None
        q = Path(p).expanduser()
        q = q if q.is_absolute() else base_dir / q
        if must_exist and not q.exists():
            ck.fail(path, f"referenced file does not exist: {q}")
        return str(q)

    if ds.name != "digits":
        ds.path = resolve(ds.path, "dataset.path")
    net = _network(ck, raw.get("network"), "network", ds)
    student = _network(ck, raw["student"], "student", ds) if raw.get("student") is not None else None
    hp_raw = dict(ck.keys(raw.get("training") or {}, {f.name for f in fields(Hyperparams)}, "training"))
    hp_raw["seed"] = seed
    hp = ck.build(Hyperparams, hp_raw, "training")
    kd = ck.build(KDConfig, raw.get("kd"), "kd")
    energy = ck.build(EnergySpec, raw.get("energy"), "energy")
    energy.params = resolve(energy.params, "energy.params")
    comp = raw.get("compression")
    if comp is not None:
        ck.keys(comp, {"preset", "in_shape", "out_shape", "n_im", "n_sp", "bayer_factor_enabled"}, "compression")
    return ExperimentConfig(
        seed=seed, dataset=ds, network=net, student=student, training=hp, kd=kd,
        teacher_checkpoint=resolve(raw.get("teacher_checkpoint"), "teacher_checkpoint"),
        energy=energy, compression=comp,
        output_dir=raw.get("output_dir", "runs/default"),
    )


def load_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigFileError(f"{path}:0: config file not found")
    return parse_config(path.read_text(), str(path), path.parent, seed)


def default_config(seed: int, dataset: str = "digits") -> ExperimentConfig:
    """Config used when no ``--config`` is given."""
    return parse_config(f"seed: {seed}\ndataset: {{name: {dataset}}}\nnetwork: {{preset: vgg6_lite}}\n",
                        "<default>", seed=seed)
