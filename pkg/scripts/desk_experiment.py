"""Paired-seed comparison of static and dynamic binarization.

On CIFAR-10 (``--dataset cifar10``) this is the full directional check:
DyBinaryCCT-2 with sign vs dysign and DyBCNN-micro with sign+rprelu vs
dysign+dyprelu, 20 epochs, 4 seeds. ``--dataset synthetic`` runs the same
protocol on generated data at a reduced size; its numbers say nothing about
CIFAR-10 accuracy and are labelled as such in the output.

    python3 scripts/desk_experiment.py --dataset synthetic --epochs 3 --seeds 0 1
"""

import argparse
import json
import os
import sys
import time

from dybnn.data import SynthSpec, load_cifar10, synth_dataset
from dybnn.experiment import paired_comparison
from dybnn.train import TrainConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dataset", choices=["cifar10", "synthetic"], default="synthetic")
    p.add_argument("--data-root", default=os.environ.get("DYBNN_CIFAR10", "data/cifar-10-batches-bin"))
    p.add_argument("--families", nargs="+", choices=["cct", "cnn"], default=["cct", "cnn"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3])
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--train-subset", type=int, help="use only the first N training images")
    p.add_argument("--image-size", type=int, default=16, help="synthetic only")
    p.add_argument("--n-train", type=int, default=1000, help="synthetic only")
    p.add_argument("--n-test", type=int, default=400, help="synthetic only")
    p.add_argument("--out", default="runs/desk_experiment.json")
    args = p.parse_args(argv)

    overrides = {}
    if args.dataset == "cifar10":
        d = load_cifar10(args.data_root)
        label = "CIFAR-10"
    else:
        spec = SynthSpec(image_size=args.image_size, n_train=args.n_train, n_test=args.n_test, separation=0.5,
                         noise=1.0)
        d = synth_dataset(spec, seed=0)
        overrides = {"image_size": args.image_size}
        label = f"SYNTHETIC {args.image_size}x{args.image_size} (not CIFAR-10)"
    train, test = d.train, d.test
    if args.train_subset:
        train = train.subset(slice(0, args.train_subset))

    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                      augment=args.dataset == "cifar10")
    report = {"data": label, "train_images": len(train), "test_images": len(test), "epochs": args.epochs,
              "results": []}
    t0 = time.perf_counter()
    for family in args.families:
        res = paired_comparison(
            family, train, test, args.seeds, cfg, overrides,
            progress=lambda arm, seed, top1: print(f"  {family} {arm:<16} seed {seed}: top-1 {top1:.4f}", flush=True),
        )
        report["results"].append(res.to_dict())
        print(f"{family}: {res.baseline} {res.mean(res.baseline):.4f} vs {res.dynamic} {res.mean(res.dynamic):.4f}"
              f"  gap {res.gap:+.4f}  wins {res.wins}/{len(res.seeds)}  [{label}]", flush=True)
    report["seconds"] = round(time.perf_counter() - t0, 1)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2)
    print(f"written: {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
