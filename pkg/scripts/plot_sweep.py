"""Plot ratio-vs-k curves from one or more sweep CSV files.

Not part of the package; needs matplotlib (``pip install .[plot]``).

    clockauct sweep --mechanism hedging --out hedging.csv
    python scripts/plot_sweep.py hedging.csv mechanism2.csv -o ratios.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from clockauction.evaluation import sanity_ceiling
from clockauction.io import read_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="ratios.png")
    args = ap.parse_args(argv)

    fig, ax = plt.subplots(figsize=(6, 4))
    ks_all = set()
    for path in args.csv:
        _, rows = read_csv(path)
        ks = [int(r["k"]) for r in rows]
        ks_all.update(ks)
        ax.plot(ks, [float(r["ratio"]) for r in rows], marker="o", label=rows[0]["mechanism"] if rows else path)
    ks = sorted(ks_all)
    ax.plot(ks, [sanity_ceiling(k) for k in ks], "k--", lw=1, label="sanity ceiling")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("k (maximal sets)")
    ax.set_ylabel("E[OPT] / E[welfare]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
