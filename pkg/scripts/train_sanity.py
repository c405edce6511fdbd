"""Desk-scale training run: PIG pairs, default architecture, held-out corner error per epoch.

    python3 scripts/train_sanity.py --iters 200 --out runs/sanity
"""
import argparse
import time
from pathlib import Path

from hhmosaic import formats
from hhmosaic.pig import make_pig_dataset
from hhmosaic.regressor import ModelConfig, RegressorModel, TrainConfig, save, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=512)
    ap.add_argument("--heldout", type=int, default=64)
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--neighborhood", default="eight_neighbor", choices=["eight_neighbor", "all_positions"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/sanity"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    data = make_pig_dataset(args.pairs, 64, args.seed)
    held = make_pig_dataset(args.heldout, 64, args.seed + 1)
    model = RegressorModel.build(ModelConfig(neighborhood=args.neighborhood), args.seed)
    cfg = TrainConfig(lr=args.lr, seed=args.seed, epochs=10**6, max_iters=args.iters)
    t0 = time.perf_counter()
    model, log = train(model, data, cfg, held,
                       progress=lambda e: print(f"epoch {e['epoch']:3d} iters {e['iterations']:5d} "
                                                f"loss {e['train_loss']:9.3f} held-out {e['heldout_corner_px']:.3f} px"))
    first, last = log[0]["heldout_corner_px"], log[-1]["heldout_corner_px"]
    print(f"identity-prediction error {first:.3f} px -> {last:.3f} px ({100 * (1 - last / first):.1f}% lower) "
          f"in {time.perf_counter() - t0:.0f} s")
    save(model, args.out / "model.bin")
    formats.write_train_log_csv(args.out / "train_log.csv", log)


if __name__ == "__main__":
    main()
