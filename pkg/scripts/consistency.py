"""Anchor NEES over repeated nominal RI+SKF runs.

    python3 scripts/consistency.py --trials 100 --out out/consistency
"""
import argparse
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from uwbcalib.config import load_config
from uwbcalib.io import write_csv
from uwbcalib.montecarlo import run_montecarlo, worker_count


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="nominal")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--mode", default="ri+skf")
    ap.add_argument("--out", default="out/consistency")
    args = ap.parse_args()

    cfg = load_config(args.config)
    cfg.montecarlo.modes = [args.mode]
    if args.seed is not None:
        cfg.scenario.seed = args.seed
    rep = run_montecarlo(cfg, args.trials, worker_count())
    rows = rep["cells"][0]["modes"][args.mode]["trials"]
    ok = [r for r in rows if r["status"] == "ok"]
    lo, hi = chi2.ppf([0.025, 0.975], 3)
    nees = np.array([r["anchor_nees"] for r in ok])
    inside = (nees >= lo) & (nees <= hi)
    print(f"{len(ok)}/{len(rows)} trials ok, 95% band [{lo:.3f}, {hi:.3f}]")
    for j in range(nees.shape[1]):
        print(f"anchor {j}: mean NEES {nees[:, j].mean():.2f}, in band {inside[:, j].sum()}")
    print(f"initial covariances PSD in all trials: {all(r['init_cov_psd'] for r in rows)}")

    # time-averaged NEES across trials
    series = [np.array(r["nees_series"]) for r in ok]
    n = min(len(s) for s in series)
    avg = np.mean([s[:n] for s in series], axis=0)
    fields = ["t"] + [f"nees_{j}" for j in range(nees.shape[1])]
    out = Path(args.out)
    write_csv(out / "nees_series.csv", fields, [dict(zip(fields, row)) for row in avg])
    print(f"wrote {out / 'nees_series.csv'}")


if __name__ == "__main__":
    main()
