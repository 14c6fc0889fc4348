"""Plot the CSV tables written by run_all_experiments.py.

    python scripts/plot_results.py --out results

Needs matplotlib, which is not a package dependency.  Missing tables are
skipped.
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np


def read(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = list(zip(*rows[1:]))
    return {name: np.array([float(v) if v else np.nan for v in col])
            for name, col in zip(rows[0], cols)}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    args = p.parse_args(argv)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; run `pip install matplotlib` to draw the figures")
        return 1
    out = Path(args.out)
    drawn = []

    def save(fig, name):
        fig.tight_layout()
        fig.savefig(out / name, dpi=120)
        plt.close(fig)
        drawn.append(name)

    for branch in ("set", "reset"):
        f = out / f"dc_mirror_{branch}.csv"
        if f.exists():
            d = read(f)
            fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
            ax[0].plot(d["iref"] * 1e6, np.abs(d["imirr"]) * 1e6, "o-")
            ax[0].set(xlabel="Iref (uA)", ylabel="|Imirr| (uA)", title=f"{branch}: DC")
            ax[1].plot(d["iref"] * 1e6, d["deviation_pct"], "o-")
            ax[1].set(xlabel="Iref (uA)", ylabel="factor - 1 (%)")
            save(fig, f"dc_mirror_{branch}.png")
        f = out / f"supply_range_{branch}.csv"
        if f.exists():
            d = read(f)
            fig, ax = plt.subplots(figsize=(4.5, 3.5))
            ax.plot(d["vdd"], np.abs(d["imirr"]) * 1e6)
            ax.set(xlabel="Vdd (V)", ylabel="|Imirr| (uA)", title=f"{branch}: supply range")
            save(fig, f"supply_range_{branch}.png")
        f = out / f"tran_mirror_{branch}.csv"
        if f.exists():
            d = read(f)
            fig, ax = plt.subplots(figsize=(4.5, 3.5))
            for vdd in np.unique(d["vdd"]):
                sel = d["vdd"] == vdd
                ax.plot(d["iref"][sel] * 1e6, np.abs(d["deviation_pct"][sel]), "o-",
                        label=f"Vdd {vdd:g} V")
            ax.set(xlabel="Iref (uA)", ylabel="|deviation| (%)", title=f"{branch}: pulse amplitude")
            ax.legend()
            save(fig, f"tran_mirror_{branch}.png")
        f = out / f"wafer_{branch}.csv"
        if f.exists():
            d = read(f)
            fig, axes = plt.subplots(1, 2, figsize=(9, 4))
            for circuit, ax in enumerate(axes):
                img = np.full((16, 16), np.nan)
                sel = d["circuit"] == circuit
                img[d["die_y"][sel].astype(int), d["die_x"][sel].astype(int)] = \
                    d["mean_deviation_pct"][sel]
                im = ax.imshow(img, origin="lower", cmap="viridis")
                ax.set(title=f"{branch}: circuit {circuit}", xticks=[], yticks=[])
                fig.colorbar(im, ax=ax, label="mean deviation (%)")
            save(fig, f"wafer_{branch}.png")
    f = out / "buffer_trace.csv"
    if f.exists():
        d = read(f)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(d["time"] * 1e6, d["v(bufout)"])
        ax.set(xlabel="time (us)", ylabel="buffer output (V)")
        save(fig, "buffer_trace.png")
    for name in drawn:
        print(out / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
