"""Teacher vs 4-channel student, with and without KD, averaged over seeds.

    python3 scripts/kd_direction.py --dataset mnist --data data/mnist --train 2000 --test 1000
    python3 scripts/kd_direction.py --dataset cifar10 --data data/cifar10 --epochs 8
"""

import argparse
import json
import logging

from insensor_snn.datasets import load_cifar10, load_mnist
from insensor_snn.experiments import kd_direction
from insensor_snn.numerics import deterministic
from insensor_snn.training import Hyperparams, KDConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--dataset", choices=["mnist", "cifar10"], default="cifar10")
    ap.add_argument("--data", required=True)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--lambda-logit", type=float, default=1.0)
    ap.add_argument("--lambda-act", type=float, default=0.5)
    ap.add_argument("--out", help="write the JSON summary here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    loader = load_cifar10 if args.dataset == "cifar10" else load_mnist
    tr = loader(args.data, split="train").subset(args.train, 0)
    te = loader(args.data, split="test").subset(args.test, 1)
    with deterministic():
        res = kd_direction(tr, te, seeds=tuple(args.seeds), hp=Hyperparams(epochs=args.epochs),
                           kd=KDConfig(args.lambda_logit, args.lambda_act))
    summary = {**res.to_dict(), "kd_helps": res.kd_helps, "reduction_hurts": res.reduction_hurts}
    text = json.dumps(summary, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
