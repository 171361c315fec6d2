"""Desk-scale comparison of minibatch condition splits and fine-tuning presets.

Trains a narrow gGCRN16 on a small synthetic pool once per setting and
evaluates every run on the same condition files. The numbers only show the
direction of each effect; they are far from full-scale results.
"""
import argparse

from echolab import synth
from echolab.enhance import ModelSystem
from echolab.metrics import evaluate
from echolab.models import CrnModel, ggcrn16
from echolab.training import PRESETS, MinibatchConditionSplit, TrainSchedule, train

SETTINGS = [
    ("16/0/0", "plain"),
    ("12/4/0", "plain"),
    ("13/2/1", "plain"),
    ("random", "plain"),
    (None, "ca-15-1-0"),
    (None, "ca-16-0-0"),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--files", type=int, default=24)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--kernels", type=int, default=8)
    ap.add_argument("--eval-files", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    catalog = synth.SyntheticCatalog()
    pool = synth.build_training_pool(args.seed, catalog, args.files, max(2, args.files // 8), seconds=4.0)
    dev = [synth.make_condition_file(args.seed + 1000, catalog, index=i) for i in range(args.eval_files)]
    schedule = TrainSchedule(initial_lr=1e-3, min_lr=1e-5, max_epochs=args.epochs, batch_size=16, bptt_frames=64)
    cfg = ggcrn16(kernel_count=args.kernels, groups_layer1=8, groups_layer2=8, seed=args.seed)

    print(f"{'MCS':<8}{'preset':<11}{'STFE ERLE':>11}{'DT cERLE':>10}{'DT dist':>9}{'STNE dev':>10}")
    for mcs_text, preset in SETTINGS:
        mcs_text, weights = (PRESETS[preset][0] or mcs_text), PRESETS[preset][1]
        mcs = MinibatchConditionSplit.parse(mcs_text, schedule.batch_size)
        model = CrnModel(cfg)
        train(model, pool, schedule, mcs, weights, seed=args.seed)
        report, _ = evaluate(ModelSystem(model), dev)
        m = {r["condition"]: r for r in report.means()}
        cols = [m["STFE"]["erle_db"], m["DT"]["component_erle_db"], m["DT"]["speech_distortion_db"],
                m["STNE"]["stne_deviation_db"]]
        print(f"{mcs_text:<8}{preset:<11}" + "".join(f"{v:>11.2f}" for v in cols))


if __name__ == "__main__":
    main()
