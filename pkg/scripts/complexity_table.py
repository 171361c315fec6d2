"""Print parameter and FLOPS counts along the FCRN15 -> gGCRN16 ladder.

With ``--layers`` the per-layer breakdown of one stage is printed as well.
"""
import argparse
import json

from echolab.models import STAGES, apply_ablation, build_model, complexity_table, count_flops, format_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layers", choices=STAGES, help="also print the layer breakdown of this stage")
    ap.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    args = ap.parse_args()
    rows = complexity_table(STAGES)
    print(json.dumps(rows, indent=2) if args.json else format_table(rows))
    if args.layers:
        report = count_flops(build_model(apply_ablation(args.layers)))
        print()
        print(f"{'layer':<14}{'kind':<10}{'params':>10}{'MFLOPs/frame':>14}")
        for layer in report.layers:
            print(f"{layer.name:<14}{layer.kind:<10}{layer.params:>10}{layer.flops / 1e6:>14.3f}")


if __name__ == "__main__":
    main()
