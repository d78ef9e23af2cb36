#!/usr/bin/env python3
"""Plot the panel CSVs written by `lab run`: theory as a line, trials as error bars."""
import argparse
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_panel(csv, out_dir):
    df = pd.read_csv(csv)
    x = df.columns[0]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    groups = df.groupby("model") if "model" in df.columns else [(None, df)]
    for model, g in groups:
        g = g.sort_values(x)
        line, = ax.plot(g[x], g["theory"], "-", label=f"{model} theory" if model else "theory")
        ax.errorbar(g[x], g["empirical_mean"], yerr=g["empirical_stderr"], fmt="o", ms=3, capsize=2,
                    color=line.get_color(), label=f"{model} simulation" if model else "simulation")
    ax.set_xlabel(x)
    ax.set_ylabel(csv.stem)
    if x.startswith("alpha") and (df[x] > 0).all():
        ax.set_xscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    target = out_dir / f"{csv.stem}.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", type=pathlib.Path, help="output_dir of a `lab run`")
    ap.add_argument("--out", type=pathlib.Path, default=None, help="where to put PNGs (default: run_dir)")
    args = ap.parse_args()
    out = args.out or args.run_dir
    out.mkdir(parents=True, exist_ok=True)
    for csv in sorted(args.run_dir.glob("*.csv")):
        print(plot_panel(csv, out))


if __name__ == "__main__":
    main()
