import sys, os, argparse
import numpy as np
import pandas as pd
from termcolor import colored
from tqdm import tqdm

from lib.config import config
from lib.egp import EnsembleGP
from lib.experiment import KIND_DEFAULTS, ConfigException, ExperimentConfig, load_experiment, with_overrides
from lib.misc import atomic_write
from lib.regression import REGRESSION_MODELS, RegressionModel, fit_regression, noisy_kink_regression
from lib.scaling import COUNTED_FAMILIES, count_parameters, time_transition
from lib.systems import KINK_NOISE_LEVELS, SYSTEM_KINDS, SyntheticSystem, simulate, write_csv

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _write_or_print(frame: pd.DataFrame, path):
    if path is None:
        print(frame.to_string(index=False))
    else:
        with atomic_write(path) as f:
            frame.to_csv(f, index=False)
        print("Wrote", colored(path, "green"))


def run(args):
    print("RUN")
    cfg = load_experiment(args.config) if args.config else ExperimentConfig()
    cfg = with_overrides(
        cfg,
        {
            "run.seed": args.seed,
            "run.output": args.output,
            "model.variant": args.variant,
            "system.kind": args.system,
            "system.d_x": args.dx,
            "train.epochs": args.epochs,
        },
    )
    manifest = EnsembleGP().run(cfg)
    metrics = pd.read_csv(os.path.join(manifest.output_dir, manifest.artifacts["metrics"]))
    print(colored(f"# {manifest.variant} on {manifest.dataset}", attrs=["bold"]))
    for column in ["rmse", "spread", "coverage", "crps", "forecast_rmse", "obs_rmse"]:
        print(f"> {column:14}", f"{metrics[column].iloc[0]:.4f}")
    print("Artifacts in", colored(manifest.output_dir, "green"))
    return EXIT_OK


def sweep(args):
    print("SWEEP")
    cfg = load_experiment(args.config)
    runs, aggregate = EnsembleGP().sweep(cfg, n_jobs=args.jobs, output=args.output)
    print(aggregate.to_string())
    failed = int((runs["status"] != "done").sum())
    if failed:
        print(colored(f"{failed} of {len(runs)} runs failed", "red"))
        return EXIT_RUNTIME
    print(colored(f"{len(runs)} runs done", "green"))
    return EXIT_OK


def simulate_cmd(args):
    defaults = KIND_DEFAULTS[args.system]
    d_x, q_var, r_var, T = (defaults[k] for k in ("d_x", "q_var", "r_var", "T"))
    system = SyntheticSystem(
        kind=args.system,
        d_x=args.dx or d_x,
        q_var=q_var if args.process_var is None else args.process_var,
        r_var=r_var if args.obs_var is None else args.obs_var,
        T=args.T or T,
        seed=args.seed,
    )
    dataset = simulate(system)
    write_csv(dataset, args.out)
    print("Wrote", colored(args.out, "green"), f"({dataset.T} steps, d_y={dataset.d_y})")
    return EXIT_OK


def count_params(args):
    variants = [args.variant] if args.variant else COUNTED_FAMILIES
    rows = [
        {"variant": v, "d_x": d_x, "M": args.M, "param_count": count_parameters(v, d_x, args.M)}
        for v in variants
        for d_x in range(1, args.dx_max + 1)
    ]
    _write_or_print(pd.DataFrame(rows), args.out)
    return EXIT_OK


def time_cmd(args):
    variants = args.variant or COUNTED_FAMILIES
    rows = []
    for v in variants:
        for d_x in tqdm(args.dx, desc=v):
            seconds = time_transition(v, d_x, args.M, args.repetitions, args.N)
            rows.append(
                {"variant": v, "d_x": d_x, "M": args.M, "param_count": count_parameters(v, d_x, args.M), "median_seconds": seconds}
            )
    _write_or_print(pd.DataFrame(rows), args.out)
    return EXIT_OK


def regress(args):
    print("REGRESS")
    x, Y = noisy_kink_regression(n=args.n, seed=args.seed)
    model = RegressionModel(args.model, M=args.M, flow=args.flow)
    model, trace = fit_regression(model, x, Y, epochs=args.epochs, lr=args.lr, samples=args.samples, seed=args.seed)
    mean, var = model.predict(x)
    frame = pd.DataFrame({"x": x})
    for d in range(Y.shape[1]):
        frame[f"y_{d}"] = Y[:, d]
        frame[f"mean_{d}"] = mean[:, d]
        frame[f"var_{d}"] = var[:, d]
        rmse = float(np.sqrt(np.mean((mean[:, d] - Y[:, d]) ** 2)))
        print(f"> rmse y_{d}:", f"{rmse:.4f}")
    print("> final elbo:", f"{trace['elbo'].iloc[-1]:.2f}" if len(trace) else "n/a")
    _write_or_print(frame, args.out)
    return EXIT_OK


def summary(_):
    egp = EnsembleGP()
    print(colored("# Variants:", attrs=["bold"]))
    for name, variant in egp.variants.items():
        extra = colored(" (bayesian)", "yellow") if variant.bayesian else ""
        print(f"> {name:20}", variant.family, extra, sep="")
    print()
    print(colored("# Systems:", attrs=["bold"]))
    for kind in SYSTEM_KINDS:
        print(">", kind)
    print(">", "csv", colored("(observations from a file)", "yellow"))
    print("  kink observation noise levels:", ", ".join(str(v) for v in KINK_NOISE_LEVELS))
    print()
    print(colored("# Configuration:", attrs=["bold"]))
    print("> output path:", colored(str(egp.output_path), "green"))
    print("> jobs:       ", config.N_JOBS)
    print("> log level:  ", config.LOG_LEVEL)
    print()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Ensemble-filter Gaussian process state-space models.")
    parser.set_defaults(func=summary)
    subparsers = parser.add_subparsers()

    # run
    parser_run = subparsers.add_parser("run", help="Train and evaluate one experiment.")
    parser_run.add_argument("--config", default=None, help="Experiment TOML file (built-in defaults without one).")
    parser_run.add_argument("--seed", type=int, default=None)
    parser_run.add_argument("--variant", type=str, default=None)
    parser_run.add_argument("--system", type=str, default=None)
    parser_run.add_argument("--dx", type=int, default=None)
    parser_run.add_argument("--epochs", type=int, default=None)
    parser_run.add_argument("--output", type=str, default=None, help="Run directory.")
    parser_run.set_defaults(func=run)

    # sweep
    parser_sweep = subparsers.add_parser("sweep", help="One run per point of the [grid] section.")
    parser_sweep.add_argument("--config", required=True)
    parser_sweep.add_argument("-j", "--jobs", type=int, default=None)
    parser_sweep.add_argument("--output", type=str, default=None, help="Sweep directory.")
    parser_sweep.set_defaults(func=sweep)

    # simulate
    parser_sim = subparsers.add_parser("simulate", help="Write a synthetic dataset as CSV.")
    parser_sim.add_argument("--system", choices=SYSTEM_KINDS, default="kink")
    parser_sim.add_argument("--dx", type=int, default=None)
    parser_sim.add_argument("--T", type=int, default=None)
    parser_sim.add_argument("--obs-var", type=float, default=None)
    parser_sim.add_argument("--process-var", type=float, default=None)
    parser_sim.add_argument("--seed", type=int, default=0)
    parser_sim.add_argument("--out", required=True)
    parser_sim.set_defaults(func=simulate_cmd)

    # count-params
    parser_count = subparsers.add_parser("count-params", help="Closed-form trainable-parameter counts.")
    parser_count.add_argument("--variant", choices=COUNTED_FAMILIES, default=None)
    parser_count.add_argument("--M", type=int, default=100)
    parser_count.add_argument("--dx-max", type=int, default=100)
    parser_count.add_argument("--out", default=None)
    parser_count.set_defaults(func=count_params)

    # time-transition
    parser_time = subparsers.add_parser("time-transition", help="Median wall time of one ensemble transition.")
    parser_time.add_argument("--variant", nargs="+", choices=COUNTED_FAMILIES, default=None)
    parser_time.add_argument("--dx", nargs="+", type=int, default=[5, 50])
    parser_time.add_argument("--M", type=int, default=100)
    parser_time.add_argument("--N", type=int, default=200)
    parser_time.add_argument("--repetitions", type=int, default=31)
    parser_time.add_argument("--out", default=None)
    parser_time.set_defaults(func=time_cmd)

    # regress
    parser_reg = subparsers.add_parser("regress", help="Fit the two-output warped-GP regression on a noisy kink.")
    parser_reg.add_argument("--model", choices=REGRESSION_MODELS, default="etgp")
    parser_reg.add_argument("--flow", choices=["linear", "sal"], default="linear")
    parser_reg.add_argument("--M", type=int, default=20)
    parser_reg.add_argument("--n", type=int, default=100)
    parser_reg.add_argument("--epochs", type=int, default=2000)
    parser_reg.add_argument("--lr", type=float, default=0.01)
    parser_reg.add_argument("--samples", type=int, default=1)
    parser_reg.add_argument("--seed", type=int, default=0)
    parser_reg.add_argument("--out", default=None)
    parser_reg.set_defaults(func=regress)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigException as e:
        print(colored("Configuration error:", "red"), e)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(colored("File not found:", "red"), e.filename or e)
        return EXIT_CONFIG
    except Exception as e:
        print(colored(f"{type(e).__module__}.{type(e).__name__}:", "red"), e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
