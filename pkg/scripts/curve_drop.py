"""Accuracy of one trained network: digital, in-sensor with the ideal curve, in-sensor saturating.

    python3 scripts/curve_drop.py --dataset mnist --data data/mnist --train 2000
"""

import argparse
import json

from insensor_snn.datasets import load_cifar10, load_mnist
from insensor_snn.experiments import curve_drop, train_reference
from insensor_snn.numerics import deterministic
from insensor_snn.snn import vgg6_lite
from insensor_snn.training import Hyperparams


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--dataset", choices=["mnist", "cifar10"], default="cifar10")
    ap.add_argument("--data", required=True)
    ap.add_argument("--train", type=int, default=5000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--quant-bits", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    loader = load_cifar10 if args.dataset == "cifar10" else load_mnist
    tr = loader(args.data, split="train").subset(args.train, 0)
    te = loader(args.data, split="test").subset(args.test, 1)
    with deterministic():
        net = train_reference(vgg6_lite(args.channels, tr.shape, 10), tr,
                              Hyperparams(epochs=args.epochs), args.seed)
        res = curve_drop(net, te, quant_bits=args.quant_bits)
    print(json.dumps({"digital": res.digital, "ideal": res.ideal, "saturating": res.saturating,
                      "drop_points": res.drop_points}, indent=2))


if __name__ == "__main__":
    main()
