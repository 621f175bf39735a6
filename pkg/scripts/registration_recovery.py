"""Registration recovery on seeded synthetic keypoint clouds with 20% wrong matches.

    python3 scripts/registration_recovery.py [--trials 50] [--noise 0.05]
"""

import argparse

from radarlcd.experiments import registration_trials


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--noise", type=float, default=0.05, help="point noise sigma in metres")
    ap.add_argument("--outliers", type=float, default=0.2, help="fraction of wrong matches")
    args = ap.parse_args()
    trials = registration_trials(args.trials, point_noise=args.noise, outlier_fraction=args.outliers)
    good = sum(t.translation_error <= 0.1 and t.rotation_error_deg <= 1.0 for t in trials)
    print(f"{good}/{len(trials)} within 0.1 m and 1 deg")
    print(f"worst translation {max(t.translation_error for t in trials):.4f} m, "
          f"worst rotation {max(t.rotation_error_deg for t in trials):.4f} deg")


if __name__ == "__main__":
    main()
