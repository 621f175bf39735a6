"""Compare trained NetVLAD, untrained NetVLAD and Scan Context on one synthetic run.

    python3 scripts/directional_check.py [--config scripts/configs/directional.ini] [--seed N]
"""

import argparse
from pathlib import Path

from radarlcd.config import load_config
from radarlcd.experiments import directional_check

DEFAULT = Path(__file__).parent / "configs" / "directional.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=DEFAULT)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    r = directional_check(cfg.validate())
    print(r.summary())
    print(f"trained - untrained = {r.trained_map - r.untrained_map:+.3f}, "
          f"trained - scancontext = {r.trained_map - r.scancontext_map:+.3f}")


if __name__ == "__main__":
    main()
