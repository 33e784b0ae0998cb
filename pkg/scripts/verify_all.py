"""Run every ordering suite plus the comparison-principle checks and the negative control.

    python3 scripts/verify_all.py --n 100 --seed 7 --out-dir out/verify
"""
import argparse
import sys

from tumorcontain.cli import verify_command


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out-dir", default="out/verify")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    code = verify_command("all", args.n, args.seed, args.out_dir, args.workers)
    print("negative control (expected to fail):")
    control = verify_command("P1", min(args.n, 10), args.seed, None, args.workers,
                             negative_control=True)
    if control == 0:
        print("negative control passed: the harness cannot detect violations")
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
