"""Print BOPs / FLOPs / OPs for every preset next to its published row."""

import argparse
import sys

from dybnn.costmodel import CONVENTIONS, count_ops
from dybnn.models import PRESETS


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--convention", choices=CONVENTIONS, default="published")
    args = p.parse_args(argv)
    print(f"{'preset':<16} {'BOPs':>10} {'FLOPs':>10} {'OPs':>10} {'ref OPs':>10} {'dev':>7}")
    for name, preset in sorted(PRESETS.items()):
        r = count_ops(preset.build(materialize=False), convention=args.convention)
        ref = preset.reference.get("ops")
        dev = f"{(r.ops - ref) / ref:+.1%}" if ref else ""
        ref_s = f"{ref:.4g}" if ref else "-"
        print(f"{name:<16} {r.bops:>10.4g} {r.flops:>10.4g} {r.ops:>10.4g} {ref_s:>10} {dev:>7}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
