"""Command-line entry point: simulate / train / estimate / doa / bench / report.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
invariant violation. All randomness flows from the --seed flags; reruns with
identical inputs produce identical output files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, backend, bench
from .channel_sim import (
    AnglePrior,
    ChannelScenario,
    default_angle_prior,
    generate_dataset,
    load_dataset,
)
from .dictionary import build_dictionary, grid_circulant, grid_equidistant_sin, grid_toeplitz
from .estimators import (
    build_cache,
    doa_batch,
    estimate_batch,
    prune,
    responsibility_entropy,
    save_channel_estimates,
    save_results_csv,
)
from .mixture import TrainConfig, load_model, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DEG = np.pi / 180.0


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_prior(path):
    try:
        doc = json.loads(Path(path).read_text())
        comps = tuple(
            (c * _DEG, s * _DEG, w) for c, s, w in doc["components_deg"]
        )
        lo, hi = doc["support_deg"]
        return AnglePrior(components=comps, support=(lo * _DEG, hi * _DEG))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read angle prior {path}: {exc}") from exc


def _scenario_from_args(args):
    prior = _load_prior(args.prior_file) if args.prior_file else default_angle_prior()
    return ChannelScenario(
        n_antennas=args.n,
        angle_prior=prior,
        pas_std=args.pas_std_deg * _DEG,
        quadrature_nodes=args.quadrature_nodes,
    )


def _noise_variance_from_args(args):
    if args.sigma2 is not None and args.snr_db is not None:
        raise UsageError("give either --snr-db or --sigma2, not both")
    if args.sigma2 is not None:
        return args.sigma2
    if args.snr_db is not None:
        return bench.snr_db_to_noise_variance(args.snr_db)
    raise UsageError("one of --snr-db or --sigma2 is required")


def cmd_simulate(args):
    if args.nt < 1:
        raise UsageError("--nt must be at least 1")
    scenario = _scenario_from_args(args)
    sigma2 = _noise_variance_from_args(args)
    dataset = generate_dataset(
        scenario, args.nt, sigma2, args.seed, keep_truth=not args.no_truth
    )
    dataset.save(args.out)
    power = (
        float(np.mean(np.abs(dataset.truth_channels) ** 2))
        if dataset.truth_channels is not None
        else float("nan")
    )
    emp_snr = power / sigma2 if sigma2 > 0 else float("inf")
    print(
        f"wrote {args.out}: N={scenario.n_antennas} N_t={args.nt} "
        f"sigma2={sigma2:g} seed={args.seed} empirical_snr={emp_snr:.4g}"
    )
    return EXIT_OK


_GRID_BUILDERS = {
    "equidistant_sin": lambda args: grid_equidistant_sin(args.grid_size),
    "circulant": lambda args: grid_circulant(args.n_antennas),
    "toeplitz": lambda args: grid_toeplitz(args.n_antennas),
}


def cmd_train(args):
    try:
        dataset = load_dataset(args.dataset)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    ns = argparse.Namespace(grid_size=args.grid_size, n_antennas=dataset.n_antennas)
    grid = _GRID_BUILDERS[args.grid_kind](ns)
    dictionary = build_dictionary(grid, dataset.n_antennas)
    config = TrainConfig(
        n_components=args.k,
        max_iter=args.max_iter,
        rel_tol=args.rel_tol,
        gamma_floor=args.gamma_floor,
        seed=args.seed,
        chunk_size=args.chunk_size,
    )
    model = train(dataset, dictionary, config)
    model.save(args.out)
    print(
        f"wrote {args.out}: K={args.k} S={grid.size} iterations={model.n_iter} "
        f"final_ll={model.ll_history[-1]:.6f} monotone={model.monotone}"
    )
    if not model.monotone:
        raise NumericError("EM log-likelihood decreased during training")
    return EXIT_OK


def _run_estimation(args):
    try:
        dataset = load_dataset(args.dataset)
        model = load_model(args.model)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if args.p > model.grid.size:
        raise UsageError(
            f"--p {args.p} exceeds the model grid size {model.grid.size}"
        )
    sigma2 = dataset.noise_variance
    if sigma2 <= 0:
        raise DataError("dataset noise variance must be positive for estimation")
    if abs(sigma2 - model.noise_variance) > 1e-12 * max(sigma2, model.noise_variance):
        print(
            f"warning: dataset sigma2={sigma2:g} differs from the model's "
            f"training sigma2={model.noise_variance:g}",
            file=sys.stderr,
        )
    dictionary = build_dictionary(model.grid, dataset.n_antennas)
    pruned = prune(model, dictionary, args.p)
    cache = build_cache(pruned, None, [sigma2])
    s_hat, h_hat, resp, _ = estimate_batch(
        dataset.observations, pruned, cache, sigma2
    )
    doa = doa_batch(s_hat, model.grid)
    # single pass: channel estimate, responsibilities and direction together
    return dataset, model, s_hat, h_hat, resp, doa


def _print_metrics(dataset, h_hat, doa):
    if dataset.truth_channels is not None:
        nmse = bench.metric_nmse(h_hat, dataset.truth_channels, dataset.n_antennas)
        print(f"nmse={nmse:.6g}")
    if dataset.truth_angles is not None:
        rmse = bench.metric_rmse_deg(doa, dataset.truth_angles)
        print(f"rmse_deg={rmse:.6g}")


def cmd_estimate(args):
    dataset, model, s_hat, h_hat, resp, doa = _run_estimation(args)
    entropy = responsibility_entropy(resp)
    save_results_csv(
        args.out, doa, entropy, h_hat if args.include_channels else None
    )
    if args.channel_out:
        save_channel_estimates(
            args.channel_out, h_hat, dataset.noise_variance, dataset.seed
        )
    print(f"wrote {args.out}: {dataset.n_samples} samples")
    _print_metrics(dataset, h_hat, doa)
    return EXIT_OK


def cmd_doa(args):
    if args.results:
        # reuse an existing estimation result file, no recompute
        try:
            with open(args.results, newline="") as fh:
                rows = list(csv.DictReader(fh))
            doa = np.array([float(r["doa_estimate_rad"]) for r in rows])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot reuse results {args.results}: {exc}") from exc
        for angle in doa:
            print(f"{angle:.12g}")
        return EXIT_OK
    if not (args.model and args.dataset):
        raise UsageError("doa needs either --results or both --model and --dataset")
    dataset, model, s_hat, h_hat, resp, doa = _run_estimation(args)
    if args.out:
        save_results_csv(args.out, doa, responsibility_entropy(resp))
        print(f"wrote {args.out}: {dataset.n_samples} samples")
    else:
        for angle in doa:
            print(f"{angle:.12g}")
    _print_metrics(dataset, h_hat, doa)
    return EXIT_OK


def _parse_override(text):
    if "=" not in text:
        raise UsageError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _experiment_config(base, doc, context):
    valid = {f.name for f in fields(bench.ExperimentConfig)}
    merged = bench._config_dict(base)
    merged.pop("angle_prior")
    for key, value in doc.items():
        if key not in valid:
            raise UsageError(f"unknown config key {key!r} in {context}")
        if isinstance(value, list):
            value = tuple(value)
        merged[key] = value
    return bench.ExperimentConfig(**merged)


def _profile_from_args(args):
    profile = bench.get_profile(args.profile, seed=args.seed)
    overrides = dict(_parse_override(t) for t in args.set or [])
    file_doc = {}
    if args.config:
        try:
            file_doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise DataError(f"config {args.config} must hold a JSON object")
    for section in ("nmse", "doa"):
        doc = dict(file_doc.get(section, {}))
        unknown = set(file_doc) - {"nmse", "doa"}
        if unknown:
            raise UsageError(
                f"unknown config section {sorted(unknown)[0]!r} (use 'nmse'/'doa')"
            )
        doc.update(overrides)  # flags override file values
        cfg = _experiment_config(getattr(profile, section), doc, f"section {section}")
        setattr(profile, section, cfg)
    return profile


def _workers_from_args(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("CSGMM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CSGMM_WORKERS must be an integer, got {env!r}")
    return 1


def cmd_bench(args):
    profile = _profile_from_args(args)
    workers = _workers_from_args(args)
    manifest = bench.run_profile(
        profile, args.out_dir, workers=workers, emit_plotscript=args.emit_plotscript
    )
    n_checks = len(manifest["checks"])
    n_passed = sum(c["passed"] for c in manifest["checks"])
    print(
        f"profile {profile.name}: {n_passed}/{n_checks} checks passed, "
        f"{len(manifest['cell_failures'])} cell failures, "
        f"{manifest['total_wall_seconds']:.1f}s -> {args.out_dir}"
    )
    for check in manifest["checks"]:
        if not check["passed"]:
            print(f"  FAILED {check['name']}: {check['detail']}", file=sys.stderr)
    if not manifest["all_passed"]:
        raise NumericError("benchmark profile assertions failed")
    return EXIT_OK


def cmd_report(args):
    counts = bench.parameter_counts(args.k, args.p, args.n)
    print(f"model parameter counts (K={args.k}, P={args.p}, N={args.n}):")
    for name, value in sorted(counts.items()):
        print(f"  {name}: {value}")
    scaling = bench.measured_op_counts()
    print(
        f"online op scaling (K={scaling['n_components']}, "
        f"P={scaling['support_size']}, complex multiply-adds per call):"
    )
    for n, ops in sorted(scaling["ops_per_call"].items()):
        print(f"  N={n}: {ops}")
    print(f"  affine fit: ops ~= {scaling['affine_slope']:.1f}*N "
          f"+ {scaling['affine_intercept']:.1f}")
    print(f"  max doubling ratio: {scaling['max_doubling_ratio']:.3f}")
    report = {"parameter_counts": counts, "op_scaling": scaling}
    if args.backends:
        comparison = bench.backend_comparison()
        report["backend_comparison"] = comparison
        print(f"backend benchmark (active: {backend.BACKEND_NAME}):")
        for entry in comparison:
            print(
                f"  {entry['backend']}: {entry['samples_per_second']:.0f} samples/s "
                f"({entry['seconds'] * 1e6:.0f} us/batch, "
                f"max diff {entry['max_abs_diff_vs_first']:.2e})"
            )
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="csgmm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset file")
    p.add_argument("--n", type=int, required=True, help="antenna count")
    p.add_argument("--nt", type=int, required=True, help="number of samples")
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pas-std-deg", type=float, default=2.0)
    p.add_argument("--quadrature-nodes", type=int, default=1024)
    p.add_argument("--prior-file", default=None, help="JSON angle prior (degrees)")
    p.add_argument("--no-truth", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a mixture model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, required=True, help="mixture components")
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument(
        "--grid-kind",
        choices=sorted(_GRID_BUILDERS),
        default="equidistant_sin",
    )
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--gamma-floor", type=float, default=None)
    p.add_argument("--chunk-size", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="joint channel + direction estimation")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--p", type=int, required=True, help="pruned support size")
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--channel-out", default=None, help="binary channel estimates")
    p.add_argument(
        "--include-channels",
        action="store_true",
        help="add per-antenna estimate columns to the CSV",
    )
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("doa", help="direction estimates only")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument(
        "--results", default=None, help="reuse an existing estimate CSV (no recompute)"
    )
    p.set_defaults(func=cmd_doa)

    p = sub.add_parser("bench", help="run an experiment profile")
    p.add_argument("--profile", default="desk", help="desk or paper")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config with nmse/doa sections")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config key in both sections (repeatable)",
    )
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-plotscript", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="complexity and parameter-count report")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--p", type=int, default=16)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--backends", action="store_true", help="time all kernel backends")
    p.add_argument("--out", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "doa" and not args.results and args.p is None:
            raise UsageError("doa needs --p when estimating from a model")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numerical invariant violated: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
