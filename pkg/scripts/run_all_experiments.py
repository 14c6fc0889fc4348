"""Regenerate every experiment table into one output directory.

    python scripts/run_all_experiments.py --out results [--jobs 4]

Each step is a ``mirrorsim`` CLI invocation, so the resulting CSV files and
``manifest.txt`` are identical to running the commands by hand.
"""
import argparse
import sys
import time

from mirrorsim import cli


def steps(jobs: int) -> list[list[str]]:
    out = []
    for branch in ("set", "reset"):
        out += [["dc-mirror", "--branch", branch],
                ["supply-range", "--branch", branch],
                ["tran-mirror", "--branch", branch, "--vdd", "5", "4"],
                ["wafer-mc", "--branch", branch, "--jobs", str(jobs)]]
    out += [["rise-family", "--branch", "set"], ["buffer"]]
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args(argv)
    for step in steps(args.jobs):
        t0 = time.perf_counter()
        code = cli.main(step + ["--out", args.out])
        print(f"{' '.join(step):45s} exit {code}  {time.perf_counter() - t0:6.1f} s")
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
