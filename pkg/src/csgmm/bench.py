"""Experiment harness: NMSE-over-SNR and NMSE-over-support sweeps, DoA RMSE
sweeps, a parameter/op-count complexity report, and profile runs with embedded
sanity assertions.

Cells (one per SNR point) are independent jobs: each derives its own dataset
and initialization seeds from the master seed, so worker-parallel runs produce
identical CSVs. CSV values are rounded to 6 significant digits.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import backend
from .channel_sim import (
    AnglePrior,
    ChannelScenario,
    _pas_first_column,
    default_angle_prior,
    generate_dataset,
)
from .dictionary import (
    build_dictionary,
    grid_circulant,
    grid_equidistant_sin,
    grid_toeplitz,
)
from .estimators import (
    baseline_dml,
    baseline_ls,
    baseline_sample_lmmse,
    build_cache,
    doa_batch,
    estimate_batch,
    prune,
    sbl_batch,
)
from .mixture import CsgmmModel, TrainConfig, train

_RAD2DEG = 180.0 / np.pi

NMSE_ESTIMATORS = ("ls", "sample_lmmse", "genie", "circ", "toep", "csgmm")
DOA_ESTIMATORS = ("csgmm", "sbl", "dml")


def snr_db_to_noise_variance(snr_db):
    """Trace-normalized channels make SNR = 1/sigma2."""
    return 10.0 ** (-snr_db / 10.0)


def derive_seed(master, *tags):
    """Stable 64-bit substream seed from the master seed and integer tags."""
    ss = np.random.SeedSequence([int(master), *[int(t) for t in tags]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class ExperimentConfig:
    n_antennas: int = 16
    n_components: int = 8
    grid_size: int = 32
    support_size: int = 8
    n_train: int = 2000
    n_test: int = 1000
    snr_db: tuple = (-10.0, 0.0, 10.0, 20.0)
    sweep_snr_db: float = 10.0
    support_sweep: tuple = (1, 2, 4, 8, 16, 32)
    pas_std_deg: float = 2.0
    quadrature_nodes: int = 1024
    em_max_iter: int = 500
    em_rel_tol: float = 1e-6
    seed: int = 0
    estimators: tuple = NMSE_ESTIMATORS
    doa_estimators: tuple = DOA_ESTIMATORS
    angle_prior: AnglePrior | None = None  # None: default canyon mixture

    def __post_init__(self):
        self.snr_db = tuple(float(s) for s in self.snr_db)
        self.support_sweep = tuple(int(p) for p in self.support_sweep)
        if not self.snr_db:
            raise ValueError("SNR list must be nonempty")
        if self.n_test < 100:
            raise ValueError("need at least 100 test samples")
        if self.support_size > self.grid_size:
            raise ValueError("support size cannot exceed the grid size")
        if any(not 1 <= p <= self.grid_size for p in self.support_sweep):
            raise ValueError("support sweep values must lie in [1, grid size]")

    def scenario(self):
        return ChannelScenario(
            n_antennas=self.n_antennas,
            angle_prior=self.angle_prior or default_angle_prior(),
            pas_std=self.pas_std_deg * np.pi / 180.0,
            quadrature_nodes=self.quadrature_nodes,
        )


@dataclass
class MetricRow:
    x_kind: str
    x_value: float
    estimator: str
    metric: str
    value: float
    n_samples: int
    seed: int
    dataset_hash: str


@dataclass
class MetricTable:
    rows: list = field(default_factory=list)

    def add(self, **kwargs):
        self.rows.append(MetricRow(**kwargs))

    def value(self, x_value, estimator):
        for row in self.rows:
            if row.x_value == x_value and row.estimator == estimator:
                return row.value
        raise KeyError(f"no row for x={x_value}, estimator={estimator}")

    def estimators(self):
        return sorted({row.estimator for row in self.rows})

    def x_values(self):
        return sorted({row.x_value for row in self.rows})

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "x_kind",
                    "x_value",
                    "estimator",
                    "metric",
                    "value",
                    "n_samples",
                    "seed",
                    "dataset_hash",
                ]
            )
            for row in sorted(
                self.rows, key=lambda r: (r.x_kind, r.x_value, r.estimator)
            ):
                writer.writerow(
                    [
                        row.x_kind,
                        f"{row.x_value:g}",
                        row.estimator,
                        row.metric,
                        f"{row.value:.6g}",
                        row.n_samples,
                        row.seed,
                        row.dataset_hash,
                    ]
                )


def metric_nmse(h_hats, h_truths, n_antennas):
    """Mean of ||h_hat - h||^2 / N over the test set."""
    if h_hats.shape != h_truths.shape:
        raise ValueError("estimate/truth shape mismatch")
    return float(np.mean(np.sum(np.abs(h_hats - h_truths) ** 2, axis=1)) / n_antennas)


def metric_rmse_deg(doa_hats, doa_truths):
    """Root-mean-square angular error in degrees (plain difference, no wrap)."""
    doa_hats = np.asarray(doa_hats, dtype=float)
    doa_truths = np.asarray(doa_truths, dtype=float)
    if doa_hats.shape != doa_truths.shape:
        raise ValueError("estimate/truth shape mismatch")
    return float(np.sqrt(np.mean((doa_hats - doa_truths) ** 2)) * _RAD2DEG)


# ---------------------------------------------------------------------------
# Trained-estimator helpers

# grids used by the trained estimators; circ/toep are the structured special
# cases (full support over their DFT-matching grids)
_MIXTURE_FLAVORS = ("csgmm", "circ", "toep")


def _mixture_grid(flavor, config):
    if flavor == "csgmm":
        return grid_equidistant_sin(config.grid_size)
    if flavor == "circ":
        return grid_circulant(config.n_antennas)
    return grid_toeplitz(config.n_antennas)


def _train_mixture(flavor, train_ds, config, seed):
    grid = _mixture_grid(flavor, config)
    dictionary = build_dictionary(grid, config.n_antennas)
    model = train(
        train_ds,
        dictionary,
        TrainConfig(
            n_components=config.n_components,
            max_iter=config.em_max_iter,
            rel_tol=config.em_rel_tol,
            seed=seed,
        ),
    )
    return model, dictionary


def _mixture_channel_estimates(flavor, model, dictionary, test_ds, support_size):
    pruned = prune(model, dictionary, support_size)
    cache = build_cache(pruned, None, [test_ds.noise_variance])
    s_hat, h_hat, resp, _ = estimate_batch(
        test_ds.observations, pruned, cache, test_ds.noise_variance
    )
    return s_hat, h_hat, resp


def _genie_estimates(test_ds, scenario):
    """Per-sample LMMSE with the true angular covariance (lower bound)."""
    n = scenario.n_antennas
    h_hat = np.empty_like(test_ds.observations)
    eye = test_ds.noise_variance * np.eye(n)
    for i, (angle, y) in enumerate(zip(test_ds.truth_angles, test_ds.observations)):
        col = _pas_first_column(angle, scenario.pas_std, n, scenario.quadrature_nodes)
        cov = scipy.linalg.toeplitz(col, col.conj())
        h_hat[i] = cov @ np.linalg.solve(cov + eye, y)
    return h_hat


# ---------------------------------------------------------------------------
# Sweep cells

_EXP_NMSE, _EXP_PSWEEP, _EXP_RMSE = 1, 2, 3
_TAG_TRAIN, _TAG_TEST, _TAG_MODEL = 1, 2, 3


def _cell_datasets(config, experiment_id, cell_index, snr_db):
    sigma2 = snr_db_to_noise_variance(snr_db)
    scenario = config.scenario()
    train_ds = generate_dataset(
        scenario,
        config.n_train,
        sigma2,
        derive_seed(config.seed, experiment_id, _TAG_TRAIN, cell_index),
    )
    test_ds = generate_dataset(
        scenario,
        config.n_test,
        sigma2,
        derive_seed(config.seed, experiment_id, _TAG_TEST, cell_index),
    )
    return scenario, train_ds, test_ds


def _nmse_cell(config, cell_index, snr_db):
    """All channel estimators at one SNR point, trained and evaluated on
    freshly derived datasets (models trained per SNR)."""
    t0 = time.perf_counter()
    scenario, train_ds, test_ds = _cell_datasets(config, _EXP_NMSE, cell_index, snr_db)
    ds_hash = test_ds.content_hash()
    truths = test_ds.truth_channels
    rows, failures = [], []
    monotone = True
    for model_id, name in enumerate(config.estimators):
        try:
            if name == "ls":
                h_hat = baseline_ls(test_ds.observations)
            elif name == "sample_lmmse":
                est = baseline_sample_lmmse(
                    train_ds.observations, train_ds.noise_variance
                )
                h_hat = est(test_ds.observations)
            elif name == "genie":
                h_hat = _genie_estimates(test_ds, scenario)
            elif name in _MIXTURE_FLAVORS:
                seed = derive_seed(
                    config.seed, _EXP_NMSE, _TAG_MODEL, cell_index, model_id
                )
                model, dictionary = _train_mixture(name, train_ds, config, seed)
                monotone = monotone and model.monotone
                support = (
                    config.support_size if name == "csgmm" else dictionary.grid.size
                )
                _, h_hat, _ = _mixture_channel_estimates(
                    name, model, dictionary, test_ds, support
                )
            else:
                raise ValueError(f"unknown estimator {name!r}")
        except Exception as exc:  # cell failure: record and continue
            failures.append({"estimator": name, "snr_db": snr_db, "error": str(exc)})
            continue
        rows.append(
            MetricRow(
                x_kind="snr_db",
                x_value=snr_db,
                estimator=name,
                metric="nmse",
                value=metric_nmse(h_hat, truths, config.n_antennas),
                n_samples=config.n_test,
                seed=config.seed,
                dataset_hash=ds_hash,
            )
        )
    info = {
        "experiment": "nmse_vs_snr",
        "snr_db": snr_db,
        "wall_seconds": time.perf_counter() - t0,
        "failures": failures,
        "em_monotone": monotone,
    }
    return rows, info


def _rmse_cell(config, cell_index, snr_db):
    """All direction estimators at one SNR point (single source per channel)."""
    t0 = time.perf_counter()
    scenario, train_ds, test_ds = _cell_datasets(config, _EXP_RMSE, cell_index, snr_db)
    ds_hash = test_ds.content_hash()
    truths = test_ds.truth_angles
    grid = grid_equidistant_sin(config.grid_size)
    dictionary = build_dictionary(grid, config.n_antennas)
    rows, failures = [], []
    monotone = True
    for name in config.doa_estimators:
        try:
            if name == "csgmm":
                seed = derive_seed(config.seed, _EXP_RMSE, _TAG_MODEL, cell_index, 0)
                model, dictionary_m = _train_mixture("csgmm", train_ds, config, seed)
                monotone = monotone and model.monotone
                s_hat, _, _ = _mixture_channel_estimates(
                    "csgmm", model, dictionary_m, test_ds, config.support_size
                )
                doa = doa_batch(s_hat, dictionary_m.grid)
            elif name == "sbl":
                mu, _ = sbl_batch(
                    test_ds.observations, dictionary, test_ds.noise_variance
                )
                doa = doa_batch(mu, grid)
            elif name == "dml":
                doa = baseline_dml(test_ds.observations, dictionary)
            else:
                raise ValueError(f"unknown direction estimator {name!r}")
        except Exception as exc:
            failures.append({"estimator": name, "snr_db": snr_db, "error": str(exc)})
            continue
        rows.append(
            MetricRow(
                x_kind="snr_db",
                x_value=snr_db,
                estimator=name,
                metric="rmse_deg",
                value=metric_rmse_deg(doa, truths),
                n_samples=config.n_test,
                seed=config.seed,
                dataset_hash=ds_hash,
            )
        )
    info = {
        "experiment": "rmse_vs_snr",
        "snr_db": snr_db,
        "wall_seconds": time.perf_counter() - t0,
        "failures": failures,
        "em_monotone": monotone,
    }
    return rows, info


def _run_cells(cell_fn, config, x_values, workers):
    table = MetricTable()
    infos = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(cell_fn, config, i, x) for i, x in enumerate(x_values)
            ]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [cell_fn(config, i, x) for i, x in enumerate(x_values)]
    for rows, info in outcomes:
        table.rows.extend(rows)
        infos.append(info)
    return table, infos


def run_nmse_vs_snr(config, workers=1):
    """Channel-estimation NMSE sweep; every model is trained per SNR point."""
    return _run_cells(_nmse_cell, config, config.snr_db, workers)


def run_rmse_vs_snr(config, workers=1):
    """Direction-estimation RMSE sweep over SNR."""
    return _run_cells(_rmse_cell, config, config.snr_db, workers)


def run_nmse_vs_support(config, workers=1):
    """A single trained model evaluated on one shared test set at every pruning
    level; includes an independent full-model reference row ('csgmm_full')."""
    t0 = time.perf_counter()
    snr_db = float(config.sweep_snr_db)
    _, train_ds, test_ds = _cell_datasets(config, _EXP_PSWEEP, 0, snr_db)
    ds_hash = test_ds.content_hash()
    seed = derive_seed(config.seed, _EXP_PSWEEP, _TAG_MODEL, 0, 0)
    model, dictionary = _train_mixture("csgmm", train_ds, config, seed)
    table = MetricTable()

    def eval_at(support):
        _, h_hat, _ = _mixture_channel_estimates(
            "csgmm", model, dictionary, test_ds, support
        )
        return metric_nmse(h_hat, test_ds.truth_channels, config.n_antennas)

    sweep = sorted(set(config.support_sweep) | {config.grid_size})
    for support in sweep:
        table.add(
            x_kind="support_size",
            x_value=float(support),
            estimator="csgmm",
            metric="nmse",
            value=eval_at(support),
            n_samples=config.n_test,
            seed=config.seed,
            dataset_hash=ds_hash,
        )
    # independently recomputed unpruned reference
    table.add(
        x_kind="support_size",
        x_value=float(config.grid_size),
        estimator="csgmm_full",
        metric="nmse",
        value=eval_at(config.grid_size),
        n_samples=config.n_test,
        seed=config.seed,
        dataset_hash=ds_hash,
    )
    info = {
        "experiment": "nmse_vs_support",
        "snr_db": snr_db,
        "wall_seconds": time.perf_counter() - t0,
        "failures": [],
        "em_monotone": model.monotone,
    }
    return table, [info]


# ---------------------------------------------------------------------------
# Complexity report


def parameter_counts(n_components, support_size, n_antennas):
    """Floating-point parameter counts of the trained estimators."""
    k, p, n = n_components, support_size, n_antennas
    return {
        "csgmm_floats": k * p + k,
        "csgmm_support_ints": k * p,  # index bookkeeping, not floats
        "circ_floats": k * n + k,
        "toep_floats": k * 2 * n + k,
        "sample_lmmse_complex": n * n,
    }


def synthetic_setup(n_antennas, n_components, support_size, grid_size=None,
                    noise_variance=0.1, n_samples=1, seed=0):
    """Random trained-model stand-in for op counting and backend benchmarks."""
    grid = grid_equidistant_sin(grid_size or 2 * n_antennas)
    dictionary = build_dictionary(grid, n_antennas)
    rng = np.random.default_rng(seed)
    gammas = rng.lognormal(mean=-1.0, sigma=1.0, size=(n_components, grid.size))
    weights = rng.dirichlet(np.full(n_components, 2.0))
    model = CsgmmModel(
        gammas=gammas,
        weights=weights / weights.sum(),
        noise_variance=noise_variance,
        grid=grid,
    )
    pruned = prune(model, dictionary, support_size)
    cache = build_cache(pruned, None, [noise_variance])
    Y = (
        rng.standard_normal((n_samples, n_antennas))
        + 1j * rng.standard_normal((n_samples, n_antennas))
    ) / np.sqrt(2.0)
    return pruned, cache, Y


def measured_op_counts(n_list=(16, 32, 64), n_components=8, support_size=8, seed=0):
    """Instrumented complex multiply-add count of one estimate call per antenna
    count, with the affine fit over N and adjacent-doubling ratios."""
    ops = {}
    for n in n_list:
        pruned, cache, Y = synthetic_setup(
            n, n_components, support_size, seed=seed, n_samples=1
        )
        _, _, _, count = estimate_batch(Y, pruned, cache, 0.1)
        ops[n] = int(count)
    n_arr = np.array(sorted(ops))
    slope, intercept = np.polyfit(n_arr, [ops[n] for n in n_arr], 1)
    ratios = {
        f"{a}->{b}": ops[b] / ops[a] for a, b in zip(n_arr[:-1], n_arr[1:]) if b == 2 * a
    }
    return {
        "n_components": n_components,
        "support_size": support_size,
        "ops_per_call": ops,
        "affine_slope": float(slope),
        "affine_intercept": float(intercept),
        "doubling_ratios": ratios,
        "max_doubling_ratio": max(ratios.values()) if ratios else None,
    }


def complexity_report(config):
    """Parameter counts at the config's (K, P, N) plus measured op scaling."""
    return {
        "parameter_counts": parameter_counts(
            config.n_components, config.support_size, config.n_antennas
        ),
        "op_scaling": measured_op_counts(),
        "backend": backend.BACKEND_NAME,
    }


def backend_comparison(n_antennas=32, n_components=8, support_size=8,
                       n_samples=2000, repeats=3, seed=0):
    """Wall-clock of the batch estimation kernel under every available backend
    on an identical synthetic workload; results also cross-checked."""
    pruned, cache, Y = synthetic_setup(
        n_antennas, n_components, support_size, n_samples=n_samples, seed=seed
    )
    results = []
    reference = None
    for name in backend.available_backends():
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            s_hat, h_hat, resp, ops = estimate_batch(
                Y, pruned, cache, 0.1, backend_name=name
            )
            best = min(best, time.perf_counter() - t0)
        if reference is None:
            reference = (s_hat, h_hat, resp, ops)
            max_diff, ops_match = 0.0, True
        else:
            max_diff = max(
                float(np.max(np.abs(s_hat - reference[0]))),
                float(np.max(np.abs(h_hat - reference[1]))),
                float(np.max(np.abs(resp - reference[2]))),
            )
            ops_match = ops == reference[3]
        results.append(
            {
                "backend": name,
                "seconds": best,
                "samples_per_second": n_samples / best,
                "ops": int(ops),
                "ops_match_reference": ops_match,
                "max_abs_diff_vs_first": max_diff,
            }
        )
    return results


# ---------------------------------------------------------------------------
# Profiles


@dataclass
class Profile:
    name: str
    nmse: ExperimentConfig
    doa: ExperimentConfig


def _desk_profile(seed=0):
    return Profile(name="desk", nmse=ExperimentConfig(seed=seed),
                   doa=ExperimentConfig(seed=seed))


def _paper_profile(seed=0):
    nmse = ExperimentConfig(
        n_antennas=32,
        n_components=32,
        grid_size=64,
        support_size=16,
        n_train=20000,
        n_test=20000,
        snr_db=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
        support_sweep=(1, 2, 4, 8, 16, 32, 64),
        seed=seed,
    )
    doa = ExperimentConfig(
        n_antennas=16,
        n_components=32,
        grid_size=256,
        support_size=32,
        n_train=20000,
        n_test=20000,
        snr_db=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
        seed=seed,
    )
    return Profile(name="paper", nmse=nmse, doa=doa)


PROFILES = {"desk": _desk_profile, "paper": _paper_profile}


def get_profile(name, seed=0):
    try:
        return PROFILES[name](seed=seed)
    except KeyError:
        raise ValueError(
            f"unknown profile {name!r}; available: {', '.join(sorted(PROFILES))}"
        ) from None


def profile_assertions(nmse_table, support_table, rmse_table, infos):
    """The sanity claims a profile run must satisfy; returns (name, ok, detail)."""
    checks = []

    def check(name, ok, detail=""):
        checks.append({"name": name, "passed": bool(ok), "detail": detail})

    for info in infos:
        check(
            f"em_monotone[{info['experiment']}@{info.get('snr_db')}]",
            info.get("em_monotone", True),
            "per-iteration log-likelihood non-decreasing",
        )

    snrs = nmse_table.x_values()
    names = [n for n in nmse_table.estimators() if n != "genie"]
    for snr in snrs:
        try:
            genie = nmse_table.value(snr, "genie")
            worst = min(nmse_table.value(snr, n) for n in names)
            check(
                f"genie_lower_bound[{snr:g}dB]",
                genie <= worst * (1.0 + 1e-9),
                f"genie={genie:.4g} vs best other={worst:.4g}",
            )
        except KeyError:
            pass
        try:
            ls = nmse_table.value(snr, "ls")
            expected = snr_db_to_noise_variance(snr)
            check(
                f"ls_matches_1_over_snr[{snr:g}dB]",
                abs(ls - expected) <= 0.05 * expected,
                f"ls={ls:.4g} expected={expected:.4g}",
            )
            if snr >= 0:
                csgmm = nmse_table.value(snr, "csgmm")
                check(
                    f"csgmm_beats_ls[{snr:g}dB]",
                    csgmm <= ls,
                    f"csgmm={csgmm:.4g} ls={ls:.4g}",
                )
        except KeyError:
            pass

    if support_table is not None and support_table.rows:
        supports = support_table.x_values()
        full_p = max(supports)
        full_sweep = support_table.value(full_p, "csgmm")
        full_ref = support_table.value(full_p, "csgmm_full")
        check(
            "unpruned_equals_full_model",
            full_sweep == full_ref,
            f"sweep={full_sweep!r} reference={full_ref!r}",
        )
        vals = [support_table.value(p, "csgmm") for p in supports]
        check(
            "nmse_non_increasing_in_support",
            all(b <= a * 1.02 for a, b in zip(vals[:-1], vals[1:])),
            f"values={['%.4g' % v for v in vals]}",
        )
        if 8 in [int(p) for p in supports]:
            v8 = support_table.value(8.0, "csgmm")
            check(
                "support_8_within_5pct_of_full",
                abs(v8 - full_ref) <= 0.05 * full_ref,
                f"P=8: {v8:.4g}, full: {full_ref:.4g}",
            )

    if rmse_table is not None and rmse_table.rows:
        snrs = rmse_table.x_values()
        for name in rmse_table.estimators():
            vals = [rmse_table.value(s, name) for s in snrs]
            check(
                f"rmse_non_increasing[{name}]",
                all(b <= a * 1.10 for a, b in zip(vals[:-1], vals[1:])),
                f"values={['%.4g' % v for v in vals]}",
            )
        if 10.0 in snrs:
            try:
                ours = rmse_table.value(10.0, "csgmm")
                best = min(
                    rmse_table.value(10.0, n) for n in ("sbl", "dml")
                )
                check(
                    "csgmm_competitive_at_10dB",
                    ours <= 1.1 * best,
                    f"csgmm={ours:.4g} best-baseline={best:.4g}",
                )
            except KeyError:
                pass
    return checks


_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Plot the benchmark CSVs written next to this script.\"\"\"
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
for name, ylabel, logy in [
    ("nmse_vs_snr.csv", "nMSE", True),
    ("nmse_vs_p.csv", "nMSE", True),
    ("rmse_vs_snr.csv", "RMSE [deg]", True),
]:
    path = here / name
    if not path.exists():
        continue
    series = defaultdict(list)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            series[row["estimator"]].append((float(row["x_value"]), float(row["value"])))
    plt.figure()
    for estimator, points in sorted(series.items()):
        points.sort()
        plt.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=estimator)
    if logy:
        plt.yscale("log")
    plt.xlabel("SNR [dB]" if "snr" in name else "P")
    plt.ylabel(ylabel)
    plt.legend()
    plt.grid(True, which="both", alpha=0.3)
    out = path.with_suffix(".png")
    plt.savefig(out, dpi=150, bbox_inches="tight")
    print("wrote", out)
"""


def run_profile(profile, out_dir, workers=1, emit_plotscript=False):
    """Run the full experiment suite for a profile and write CSVs + manifest.

    Returns the manifest dict; manifest['all_passed'] reflects the embedded
    assertion checks.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    nmse_table, nmse_infos = run_nmse_vs_snr(profile.nmse, workers=workers)
    support_table, support_infos = run_nmse_vs_support(profile.nmse)
    rmse_table, rmse_infos = run_rmse_vs_snr(profile.doa, workers=workers)
    report = complexity_report(profile.nmse)

    nmse_table.to_csv(out_dir / "nmse_vs_snr.csv")
    support_table.to_csv(out_dir / "nmse_vs_p.csv")
    rmse_table.to_csv(out_dir / "rmse_vs_snr.csv")
    (out_dir / "complexity.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    infos = nmse_infos + support_infos + rmse_infos
    checks = profile_assertions(nmse_table, support_table, rmse_table, infos)
    failures = [f for info in infos for f in info["failures"]]
    from . import __version__

    manifest = {
        "profile": profile.name,
        "library_version": __version__,
        "backend": backend.BACKEND_NAME,
        "workers": workers,
        "config": {
            "nmse": _config_dict(profile.nmse),
            "doa": _config_dict(profile.doa),
        },
        "cells": infos,
        "cell_failures": failures,
        "checks": checks,
        "all_passed": not failures and all(c["passed"] for c in checks),
        "total_wall_seconds": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if emit_plotscript:
        (out_dir / "plot_results.py").write_text(_PLOT_SCRIPT)
    return manifest


def _config_dict(config):
    doc = asdict(config)
    prior = doc.pop("angle_prior")
    doc["angle_prior"] = "default" if prior is None else prior
    return doc
