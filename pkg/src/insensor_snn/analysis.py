"""Bandwidth compression and three-part energy model (sensor, link, processing).

Compression is reported as a reduction factor, input bits over output bits:

    C = (H_i W_i C_i) / (H_o W_o C_o) * (N_im / N_sp) * (4/3 if Bayer)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .numerics import ParameterError, ShapeInfo
from .snn import SparsityProfile, sparsity_profile

BAYER_FACTOR = 4.0 / 3.0


@dataclass(frozen=True)
class CompressionInputs:
    in_shape: ShapeInfo
    out_shape: ShapeInfo
    n_im: int = 12
    n_sp: int = 1
    bayer_factor_enabled: bool = True

    def __post_init__(self):
        if self.n_im < 1 or self.n_sp < 1:
            raise ParameterError("bit precisions must be >= 1")

    @property
    def bayer(self) -> float:
        return BAYER_FACTOR if self.bayer_factor_enabled else 1.0

    def input_bits(self) -> float:
        """Bits leaving a conventional sensor for one frame."""
        return self.in_shape.volume * self.bayer * self.n_im

    def output_bits(self) -> float:
        """Bits leaving the in-sensor front-end for one frame."""
        return self.out_shape.volume * self.n_sp

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionInputs":
        d = dict(d)
        d["in_shape"] = _shape(d["in_shape"])
        d["out_shape"] = _shape(d["out_shape"])
        return cls(**d)


def _shape(v) -> ShapeInfo:
    if isinstance(v, ShapeInfo):
        return v
    if isinstance(v, dict):
        return ShapeInfo(**v)
    h, w, c = v
    return ShapeInfo(h, w, c)


def compression_ratio(inputs: CompressionInputs) -> float:
    if inputs.out_shape.volume <= 0:
        raise ParameterError("output volume must be positive")
    return (inputs.in_shape.volume / inputs.out_shape.volume) * (inputs.n_im / inputs.n_sp) * inputs.bayer


@dataclass(frozen=True)
class EnergyParams:
    """Per-event energies in joules.  See ``presets/energy_illustrative.yaml``."""

    e_readout: float = 0.0
    e_adc: float = 0.0
    e_pixconv: float = 0.0
    e_cds: float = 0.0
    e_comp: float = 0.0
    e_mem: float = 0.0
    e_mac: float = 0.0
    e_ac: float = 0.0
    e_comm_bit: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ParameterError(f"{f.name} must be non-negative")

    def replace(self, **kw) -> "EnergyParams":
        return EnergyParams(**{**asdict(self), **kw})


def load_energy_params(path=None) -> EnergyParams:
    """Read an energy parameter file (YAML or JSON); ``None`` loads the shipped preset.

    Values may be given directly in joules or under a ``unit`` scale key
    (e.g. ``unit: 1.0e-12`` for picojoules).
    """
    if path is None:
        text = resources.files("insensor_snn.presets").joinpath("energy_illustrative.yaml").read_text()
    else:
        text = Path(path).read_text()
    d = yaml.safe_load(text) or {}
    d = d.get("energy", d)
    unit = float(d.pop("unit", 1.0))
    known = {f.name for f in fields(EnergyParams)}
    unknown = set(d) - known - {"note", "description"}
    if unknown:
        raise ParameterError(f"unknown energy parameters: {', '.join(sorted(unknown))}")
    return EnergyParams(**{k: float(v) * unit for k, v in d.items() if k in known})


def load_compression_preset(name: str = "vgg16") -> CompressionInputs:
    text = resources.files("insensor_snn.presets").joinpath(f"{name}_compression.yaml").read_text()
    return CompressionInputs.from_dict(yaml.safe_load(text)["compression"])


# ------------------------------------------------------------------- energies

def sensor_energy(mode: str, params: EnergyParams, pixels: float = 0,
                  conv_events: float = 0, outputs: float = 0) -> float:
    """Baseline: pixel read-out + ADC.  In-sensor: pixel conv events + CDS + comparator."""
    if min(pixels, conv_events, outputs) < 0:
        raise ParameterError("event counts must be non-negative")
    if mode == "baseline":
        return pixels * (params.e_readout + params.e_adc)
    if mode == "in_sensor":
        return conv_events * params.e_pixconv + outputs * (params.e_cds + params.e_comp)
    raise ParameterError(f"mode must be baseline or in_sensor, got {mode!r}")


def comm_energy(bits: float, params: EnergyParams) -> float:
    if bits < 0:
        raise ParameterError("bit count must be non-negative")
    return bits * params.e_comm_bit


def processing_energy(profile: SparsityProfile, params: EnergyParams) -> float:
    """Off-sensor SNN cost: memory reads plus MACs (dense analog first layer) or
    activity-scaled ACs.  An in-sensor first layer is excluded here."""
    if not profile.layers:
        raise ParameterError("profile has no layers")
    total = 0.0
    for i, lp in enumerate(profile.layers):
        if lp.ops is None or lp.reads is None or lp.rate is None:
            raise ParameterError(f"layer {lp.name}: missing ops/reads/rate")
        if i == 0:
            if profile.first_layer_in_sensor:
                continue
            total += lp.reads * params.e_mem + lp.ops * params.e_mac
        else:
            total += lp.reads * params.e_mem + lp.ops * params.e_ac * lp.rate
    return total


@dataclass
class Scenario:
    """Everything needed to price one frame through one configuration."""

    mode: str  # baseline | in_sensor
    compression: CompressionInputs
    profile: SparsityProfile
    conv_events: int = 0  # in-pixel weight-modulated reads (first-layer MACs)
    outputs: int = 0  # CDS + comparator decisions (pre-pool)

    def comm_bits(self) -> float:
        if self.mode == "baseline":
            return self.compression.input_bits()
        return self.compression.output_bits()


def scenario_from_profile(profile: SparsityProfile, mode: Optional[str] = None,
                          n_im: int = 12, bayer: bool = True) -> Scenario:
    mode = mode or ("in_sensor" if profile.first_layer_in_sensor else "baseline")
    c, h, w = profile.in_shape
    oc, oh, ow = profile.first_out_shape
    comp = CompressionInputs(ShapeInfo(h, w, c), ShapeInfo(oh, ow, oc), n_im, 1, bayer)
    first = profile.layers[0]
    return Scenario(mode, comp, profile, first.ops, profile.first_prepool_outputs)


@dataclass
class EnergyBreakdown:
    sensor: float
    communication: float
    processing: float
    total: float


@dataclass
class EnergyReport:
    baseline: EnergyBreakdown
    in_sensor: EnergyBreakdown
    ratios: dict  # component -> baseline / in_sensor
    compression: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        rows = ["component,baseline_J,in_sensor_J,ratio"]
        for comp in ("sensor", "communication", "processing", "total"):
            rows.append(f"{comp},{getattr(self.baseline, comp):.6e},"
                        f"{getattr(self.in_sensor, comp):.6e},{self.ratios[comp]:.6f}")
        return "\n".join(rows) + "\n"


def breakdown(sc: Scenario, params: EnergyParams) -> EnergyBreakdown:
    pixels = sc.compression.in_shape.volume * sc.compression.bayer
    s = sensor_energy(sc.mode, params, pixels=pixels, conv_events=sc.conv_events, outputs=sc.outputs)
    c = comm_energy(sc.comm_bits(), params)
    profile = sc.profile
    if (sc.mode == "in_sensor") != profile.first_layer_in_sensor:
        profile = SparsityProfile(profile.layers, profile.spike_rates, sc.mode == "in_sensor",
                                  profile.in_shape, profile.first_out_shape,
                                  profile.first_prepool_outputs)
    p = processing_energy(profile, params)
    return EnergyBreakdown(s, c, p, s + c + p)


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


def energy_report(baseline: Scenario, insensor: Scenario, params: EnergyParams) -> EnergyReport:
    b = breakdown(baseline, params)
    i = breakdown(insensor, params)
    ratios = {k: _ratio(getattr(b, k), getattr(i, k))
              for k in ("sensor", "communication", "processing", "total")}
    comp = _ratio(baseline.comm_bits(), insensor.comm_bits())
    return EnergyReport(b, i, ratios, comp)


def network_energy_report(net, images, params: EnergyParams, frontend=None,
                          n_im: int = 12, bayer: bool = True) -> EnergyReport:
    """Profile ``net`` on ``images`` as a digital baseline and as its in-sensor twin."""
    base = sparsity_profile(net, images)
    ins = sparsity_profile(net.to_in_sensor(frontend or net.cfg.frontend), images)
    return energy_report(scenario_from_profile(base, "baseline", n_im, bayer),
                         scenario_from_profile(ins, "in_sensor", n_im, bayer), params)
