"""Run one or more sweep configs and print the fitted scaling exponents.

    python3 scripts/run_sweep.py scripts/configs/mimic_md_three_state.json
    python3 scripts/run_sweep.py scripts/configs/*.json --resume

Output paths inside a config are taken relative to the current directory.
"""

import argparse
import warnings

from tabular_il.harness import ExperimentConfig, fit_scaling_exponent, sweep


def report(config, rows):
    print(f"== {config.instance}: {len(rows)} rows -> {config.output}")
    axes = [("H", "N", config.N_grid), ("N", "H", config.H_grid)]
    for algo in config.algorithms:
        mine = [r for r in rows if r.algorithm == algo and not r.error]
        for axis, other, values in axes:
            for v in values:
                sel = [r for r in mine if getattr(r, other) == v]
                for how in ("mean", 0.99):
                    try:
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore")
                            fit = fit_scaling_exponent(sel, axis, how)
                    except ValueError:
                        continue
                    ys = ", ".join(f"{y:.3g}" for y in fit.y)
                    print(f"  {algo:<22} {other}={v:<5} vs {axis}  {str(how):<5} slope {fit.slope:+.3f}"
                          f"  r2 {fit.r2:.3f}  [{ys}]")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("configs", nargs="+")
    parser.add_argument("--resume", action="store_true")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--replications", type=int, default=None, help="override for quick looks")
    args = parser.parse_args()
    for path in args.configs:
        config = ExperimentConfig.from_json(path)
        if args.replications:
            config.replications = args.replications
        report(config, sweep(config, resume=args.resume, threads=args.threads))


if __name__ == "__main__":
    main()
