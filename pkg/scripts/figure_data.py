"""Export plotting columns for the three R-N plane figures.

    python3 scripts/figure_data.py --config configs/monro_gaffney_fig3.cfg --out-dir out/figures
"""
import argparse
import sys

from tumorcontain.cli import FIGURES, figure_data_command


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/monro_gaffney_fig3.cfg")
    ap.add_argument("--out-dir", default="out/figures")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for fig in FIGURES:
        code = figure_data_command(fig, args.config, args.out_dir, args.seed)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
