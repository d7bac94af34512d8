"""Command-line runner.

    insensor-snn <subcommand> [--config FILE] [--seed N] [--deterministic]
                              [--out-dir DIR] [--checkpoint FILE]

Subcommands: train, distill, eval, fuse, simulate-frontend,
report-compression, report-energy.  Failures print one line
``error: <Kind>: <message>`` on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analog_frontend as af
from . import checkpoint as ckpt
from .analysis import (
    CompressionInputs,
    compression_ratio,
    load_compression_preset,
    load_energy_params,
    network_energy_report,
)
from .config import ConfigFileError, ExperimentConfig, default_config, load_config
from .datasets import Dataset, FormatError, load_cifar10, load_digits_proxy, load_mnist
from .numerics import DimensionError, ParameterError, TrainingError, deterministic
from .snn import ConfigError, FrontendConfig, build_network, sparsity_profile
from .training import distill, evaluate, metrics_csv, train

log = logging.getLogger("insensor_snn")


class EquivalenceError(RuntimeError):
    """Fused front-end disagrees with the digital first layer."""


EXIT_CODES = [
    (ConfigFileError, 2), (ConfigError, 2), (DimensionError, 3), (FormatError, 4),
    (TrainingError, 5), (EquivalenceError, 6), (ParameterError, 2), (FileNotFoundError, 7),
]

FUSE_TOLERANCE = 1e-4


# ----------------------------------------------------------------- helpers

def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config, seed=args.seed)
    else:
        cfg = default_config(0 if args.seed is None else args.seed)
    if args.out_dir:
        cfg.output_dir = args.out_dir
    cfg.training.deterministic = args.deterministic
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_data(cfg: ExperimentConfig):
    """``(train, test)`` datasets per the config (seeded subsets)."""
    ds = cfg.dataset
    if ds.name == "digits":
        full = load_digits_proxy(cfg.network.input_shape[-1])
        order = np.random.default_rng(ds.seed).permutation(len(full))
        cut = int(0.8 * len(full))
        tr_idx, te_idx = np.sort(order[:cut]), np.sort(order[cut:])
        train_set = Dataset(full.images[tr_idx], full.labels[tr_idx], "digits")
        test_set = Dataset(full.images[te_idx], full.labels[te_idx], "digits")
    else:
        if ds.path is None:
            raise ConfigFileError(f"dataset '{ds.name}' needs dataset.path")
        loader = load_cifar10 if ds.name == "cifar10" else load_mnist
        train_set = loader(ds.path, split="train")
        test_set = loader(ds.path, split="test")
    return train_set.subset(ds.train_subset, ds.seed), test_set.subset(ds.test_subset, ds.seed + 1)


def _sample_images(cfg: ExperimentConfig, n: int) -> np.ndarray:
    """Test-split images if the dataset is reachable, else seeded uniform noise."""
    try:
        _, test = load_data(cfg)
        if len(test):
            return test.images[:n]
    except (FileNotFoundError, ConfigFileError, FormatError, ImportError) as exc:
        log.warning("dataset unavailable (%s); using seeded uniform images", exc)
    rng = np.random.default_rng(cfg.seed)
    return rng.random((n,) + tuple(cfg.network.input_shape), dtype=np.float32)


def _checkpoint_path(args, cfg, default=None):
    path = args.checkpoint or default
    if path is None:
        raise ConfigFileError("<args>:0: --checkpoint is required for this subcommand")
    return path


def _load_net(path, cfg: ExperimentConfig, use_cfg: bool):
    ck = ckpt.load(path)
    return ckpt.to_network(ck, cfg.network if use_cfg else None), ck


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


# ----------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    train_set, test_set = load_data(cfg)
    net = build_network(cfg.network, cfg.seed)

    def on_best(state, acc):
        net_best = ckpt.from_network(net, {"best_accuracy": acc})
        net_best.tensors = {k: v.copy() for k, v in state.items()}
        ckpt.save(out / "best.ckpt", net_best)

    res = train(net, train_set, cfg.training, test_set, on_best=on_best)
    (out / "metrics.csv").write_text(metrics_csv(res.history))
    last = res.history[-1]
    ckpt.save(out / "model.ckpt", ckpt.from_network(net, {"accuracy": last.accuracy}))
    print(f"train: epochs={cfg.training.epochs} final_{last.split}_accuracy={last.accuracy:.4f} "
          f"best={res.best_accuracy:.4f}")
    return 0


def cmd_distill(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    if cfg.student is None:
        raise ConfigFileError(f"{args.config or '<default>'}:0: distill needs a 'student' network section")
    teacher, _ = _load_net(_checkpoint_path(args, cfg, cfg.teacher_checkpoint), cfg, use_cfg=False)
    before = {k: v.copy() for k, v in teacher.state_dict().items()}
    train_set, test_set = load_data(cfg)
    res = distill(teacher, cfg.student, train_set, cfg.kd, cfg.training, test_set)
    if any(not np.array_equal(before[k], v) for k, v in teacher.state_dict().items()):
        raise TrainingError("teacher parameters changed during distillation")
    t_loss, t_acc, _ = evaluate(teacher, test_set)
    (out / "metrics.csv").write_text(metrics_csv(res.history))
    (out / "metrics_plain.csv").write_text(metrics_csv(res.plain_history))
    ckpt.save(out / "student.ckpt", ckpt.from_network(res.student, {"accuracy": res.accuracy_kd}))
    report = {"teacher_accuracy": t_acc, "student_accuracy_kd": res.accuracy_kd,
              "student_accuracy_plain": res.accuracy_plain}
    _write_json(out / "report.json", report)
    print(f"distill: teacher={t_acc:.4f} student_kd={res.accuracy_kd:.4f} "
          f"student_plain={res.accuracy_plain:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    net, _ = _load_net(_checkpoint_path(args, cfg), cfg, use_cfg=bool(args.config))
    _, test_set = load_data(cfg)
    loss, acc, rate = evaluate(net, test_set)
    prof = sparsity_profile(net, test_set.images[:cfg.energy.sample])
    _write_json(out / "report.json", {"accuracy": acc, "loss": loss, "mean_spike_rate": rate,
                                      "profile": prof.to_dict()})
    print(f"eval: accuracy={acc:.4f} loss={loss:.4f} mean_spike_rate={rate:.4f}")
    for lp in prof.layers:
        print(f"  {lp.name:>16s} {lp.op_kind} ops={lp.ops} rate={lp.rate:.4f}")
    return 0


def verify_fusion(net, images: np.ndarray) -> float:
    """Max |logit difference| between digital and ideal-mode in-sensor evaluation."""
    ideal = net.to_in_sensor(FrontendConfig(curve={"family": "ideal"}, quant_bits=None))
    return float(np.abs(net.forward(images) - ideal.forward(images)).max())


def cmd_fuse(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    net, _ = _load_net(_checkpoint_path(args, cfg), cfg, use_cfg=False)
    images = _sample_images(cfg, args.verify_samples)
    delta = verify_fusion(net, images)
    if not delta <= FUSE_TOLERANCE:
        raise EquivalenceError(f"ideal-mode fusion mismatch: max |dlogit| = {delta:.3g} > {FUSE_TOLERANCE}")
    fused = net.to_in_sensor(cfg.network.frontend)
    ckpt.save(out / "fused.ckpt", ckpt.from_network(fused, {"verify_max_abs_dlogit": delta}))
    fe = fused.blocks[0].frontend
    _write_json(out / "report.json", {"verify_max_abs_dlogit": delta, "verify_samples": len(images),
                                      "frontend": ckpt._frontend_meta(fe)})
    print(f"fuse: equivalence ok (max |dlogit| = {delta:.3g}); wrote {out / 'fused.ckpt'}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    net, ck = _load_net(_checkpoint_path(args, cfg), cfg, use_cfg=False)
    if ck.kind != "in_sensor":
        net = net.to_in_sensor(cfg.network.frontend)
    fe = net.blocks[0].frontend
    images = _sample_images(cfg, args.count)
    spikes = af.frontend_forward(images, fe, rng=np.random.default_rng(cfg.seed))
    np.save(out / "spikes.npy", spikes)
    c, h, w = net.cfg.input_shape
    oc, oh, ow = spikes.shape[1:]
    comp = compression_ratio(CompressionInputs.from_dict(
        {"in_shape": [h, w, c], "out_shape": [oh, ow, oc], "n_im": cfg.energy.n_im, "n_sp": 1,
         "bayer_factor_enabled": cfg.energy.bayer}))
    _write_json(out / "report.json", {"images": len(images), "spike_rate": float(spikes.mean()),
                                      "out_shape": [int(v) for v in spikes.shape[1:]],
                                      "compression": comp, "curve": fe.curve.to_dict()})
    print(f"simulate-frontend: {len(images)} images -> spikes {spikes.shape[1:]} "
          f"rate={spikes.mean():.4f} C={comp:.1f}")
    return 0


def cmd_report_compression(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    comp = dict(cfg.compression or {})
    preset = args.preset or comp.pop("preset", None)
    if preset is not None or not comp:
        inputs = load_compression_preset(preset or "vgg16")
    else:
        inputs = CompressionInputs.from_dict(comp)
    c = compression_ratio(inputs)
    _write_json(out / "report.json", {"compression_ratio": c,
                                      "input_bits": inputs.input_bits(),
                                      "output_bits": inputs.output_bits()})
    print(f"C = {c:.1f}")
    return 0


def cmd_report_energy(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    params = load_energy_params(cfg.energy.params)
    if args.checkpoint:
        net, _ = _load_net(args.checkpoint, cfg, use_cfg=False)
    else:
        net = build_network(cfg.network, cfg.seed)
    images = _sample_images(cfg, cfg.energy.sample)
    rep = network_energy_report(net, images, params, cfg.network.frontend, cfg.energy.n_im, cfg.energy.bayer)
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "energy.csv").write_text(rep.to_csv())
    print(rep.to_csv(), end="")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insensor-snn", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                        help="single-threaded BLAS, fixed reduction order (default on)")
    common.add_argument("--out-dir", help="output directory (overrides output_dir)")
    common.add_argument("--checkpoint", help="input checkpoint")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common]).set_defaults(func=cmd_train)
    sub.add_parser("distill", parents=[common]).set_defaults(func=cmd_distill)
    sub.add_parser("eval", parents=[common]).set_defaults(func=cmd_eval)
    p = sub.add_parser("fuse", parents=[common])
    p.add_argument("--verify-samples", type=int, default=32)
    p.set_defaults(func=cmd_fuse)
    p = sub.add_parser("simulate-frontend", parents=[common])
    p.add_argument("--count", type=int, default=16)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("report-compression", parents=[common])
    p.add_argument("--preset", help="named geometry preset (vgg16)")
    p.set_defaults(func=cmd_report_compression)
    sub.add_parser("report-energy", parents=[common]).set_defaults(func=cmd_report_energy)
    return parser


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx = deterministic() if args.deterministic else contextlib.nullcontext()
    try:
        with ctx:
            return args.func(args)
    except tuple(cls for cls, _ in EXIT_CODES) as exc:
        code = next(c for cls, c in EXIT_CODES if isinstance(exc, cls))
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
