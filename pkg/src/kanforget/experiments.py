"""Experiment orchestration: config validation, seeded runs, report emission.

Configs are single JSON documents with nested sections.  Validation fills
every default explicitly, so the echoed config in the run manifest is the
complete record of what ran.  All report files are staged in a temporary
directory and atomically renamed into place; an interrupted run leaves no
partial report directory behind.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .digit_corpus import ensure_synthetic_corpus
from .errors import ConfigError, TrainingError, UsageError
from .ledger import ledger_to_csv
from .montecarlo import (
    McConfig,
    dimension_scaling,
    fragmentation_scaling,
    mc_expected_overlap,
    saturation_curve,
)
from .network import init_kan, save_checkpoint
from .reports import (
    coefficient_of_variation,
    run_cumulative_retention,
    run_dimension_retention_cell,
    run_pair_retention,
)
from .tasks import gen_binary_tasks, gen_decimal_tasks, load_mnist_idx
from .training import EwcConfig, TrainConfig, train_sequence

__all__ = [
    "EXPERIMENT_KINDS",
    "validate_config",
    "load_config",
    "run_experiment",
    "emit_reports",
    "load_bundle",
    "RunManifest",
]

EXPERIMENT_KINDS = (
    "binary-add",
    "decimal-add",
    "mnist-cl",
    "pair-overlap-ratio",
    "cumulative-overlap-ratio",
    "intrinsic-dim-ratio",
    "interval-overlap-mc",
    "saturation-mc",
    "dimension-mc",
    "fragmentation-mc",
)

_NETWORK_DEFAULTS = {
    "dims": None,  # kind-specific
    "grid_size": 5,
    "grid_sizes": None,  # sweepable alternative to grid_size
    "order": 3,
    "grid_range": [-1.0, 1.0],
    "base_weight_scale": 1.0,
    "spline_weight_scale": 1.0,
    "noise_scale": 0.1,
    "grid_epsilon": 0.02,  # recorded; grid re-fitting stays disabled
}

_TRAINING_DEFAULTS = {
    "learning_rate": 1e-3,
    "weight_decay": 1e-4,
    "epochs_per_task": 50,
    "loss_kind": "mse",
    "batch_size": None,
    "betas": [0.9, 0.999],
    "epsilon": 1e-8,
    "prediction_threshold": 0.5,
    "ewc": None,
    "reset_optimizer_per_task": False,
}

_ANALYSIS_DEFAULTS = {"threshold": 1e-2, "bins": 400}

_MC_DEFAULTS = {
    "trials": 100_000,
    "s_values": [0.1, 0.2, 0.5],
    "base_length": 0.3,
    "later_lengths": None,
    "r": 0.3,
    "r_sweep": [0.05, 0.1, 0.2, 0.4],
    "k_sweep": [1, 2, 4, 8],
    "d_pairs": [[1, 1], [2, 3], [3, 3]],
    "dims": [1, 2],
}

_DATA_DEFAULTS = {
    "images": None,
    "labels": None,
    "synthetic_dir": None,
    "synthetic_per_class": 400,
    "n_per_class": 100,
    "configs": [
        [2, [8, 8]],
        [2, [16, 16]],
        [2, [28, 28]],
        [4, [28, 28]],
        [8, [28, 28]],
        [16, [28, 28]],
        [32, [28, 28]],
    ],
    "hidden_dims": [],
}

_KIND_DIMS = {"binary-add": [3, 2, 2], "decimal-add": [2, 3, 2]}


def _merge_section(raw: dict, defaults: dict, name: str, diagnostics: list) -> dict:
    section = dict(defaults)
    provided = raw.get(name, {})
    if not isinstance(provided, dict):
        diagnostics.append(f"{name}: must be an object")
        return section
    for key, value in provided.items():
        if key not in defaults:
            diagnostics.append(f"{name}.{key}: unknown field")
        else:
            section[key] = value
    return section


def validate_config(raw: dict) -> tuple[dict, list[str]]:
    """Structural and semantic checks; returns (normalized config, diagnostics).

    Never executes an experiment.  The normalized config carries every
    default explicitly.
    """
    diagnostics: list[str] = []
    if not isinstance(raw, dict):
        return {}, ["config: top level must be a JSON object"]
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        diagnostics.append(
            f"kind: expected one of {', '.join(EXPERIMENT_KINDS)}, got {kind!r}"
        )
        return {}, diagnostics

    known_top = {"kind", "seeds", "network", "training", "analysis", "mc", "data",
                 "reference"}
    for key in raw:
        if key not in known_top:
            diagnostics.append(f"{key}: unknown top-level field")

    seeds = raw.get("seeds")
    if seeds is None:
        diagnostics.append("seeds: missing; suggest a list such as [0, 1, 2]")
        seeds = [0]
    elif not (isinstance(seeds, list) and seeds
              and all(isinstance(s, int) for s in seeds)):
        diagnostics.append("seeds: must be a non-empty list of integers")
        seeds = [0]

    cfg = {
        "kind": kind,
        "seeds": list(seeds),
        "network": _merge_section(raw, _NETWORK_DEFAULTS, "network", diagnostics),
        "training": _merge_section(raw, _TRAINING_DEFAULTS, "training", diagnostics),
        "analysis": _merge_section(raw, _ANALYSIS_DEFAULTS, "analysis", diagnostics),
        "mc": _merge_section(raw, _MC_DEFAULTS, "mc", diagnostics),
        "data": _merge_section(raw, _DATA_DEFAULTS, "data", diagnostics),
        "reference": raw.get("reference", None),
    }
    if cfg["network"]["dims"] is None:
        cfg["network"]["dims"] = _KIND_DIMS.get(kind)

    train = cfg["training"]
    if not (isinstance(train["learning_rate"], (int, float))
            and train["learning_rate"] > 0):
        diagnostics.append("training.learning_rate: must be a positive number")
    if not (isinstance(train["epochs_per_task"], int)
            and train["epochs_per_task"] >= 0):
        diagnostics.append("training.epochs_per_task: must be a non-negative integer")
    if train["loss_kind"] not in ("mse", "cross_entropy"):
        diagnostics.append("training.loss_kind: must be 'mse' or 'cross_entropy'")
    if train["ewc"] is not None and not isinstance(train["ewc"], dict):
        diagnostics.append("training.ewc: must be null or an object with 'lambda'")

    analysis = cfg["analysis"]
    if not analysis["threshold"] > 0:
        diagnostics.append("analysis.threshold: must be > 0")
    if not (isinstance(analysis["bins"], int) and analysis["bins"] >= 10):
        diagnostics.append("analysis.bins: must be an integer >= 10")

    mc = cfg["mc"]
    if not (isinstance(mc["trials"], int) and mc["trials"] >= 1):
        diagnostics.append("mc.trials: must be a positive integer")

    if kind in ("binary-add", "decimal-add", "pair-overlap-ratio",
                "cumulative-overlap-ratio"):
        dims = cfg["network"]["dims"]
        if not (isinstance(dims, list) and len(dims) >= 2):
            diagnostics.append("network.dims: must list at least two layer sizes")
    if kind in ("mnist-cl", "intrinsic-dim-ratio"):
        data = cfg["data"]
        has_files = data["images"] and data["labels"]
        if not has_files and data["synthetic_dir"] is None:
            diagnostics.append(
                "data: provide images+labels paths or a synthetic_dir for the "
                "stand-in corpus"
            )
    return cfg, diagnostics


def load_config(path) -> tuple[dict, list[str]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        return {}, [f"{path}: not valid JSON at line {exc.lineno}, column {exc.colno}"]
    except OSError as exc:
        return {}, [f"{path}: {exc}"]
    return validate_config(raw)


def _grid_list(cfg: dict) -> list[int]:
    grids = cfg["network"]["grid_sizes"]
    if grids:
        return [int(g) for g in grids]
    return [int(cfg["network"]["grid_size"])]


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    train = cfg["training"]
    ewc = train["ewc"]
    ewc_cfg = None
    if isinstance(ewc, dict):
        ewc_cfg = EwcConfig(
            lam=float(ewc.get("lambda", 0.1)),
            memory_tasks=int(ewc.get("memory_tasks", 1)),
        )
    return TrainConfig(
        learning_rate=float(train["learning_rate"]),
        weight_decay=float(train["weight_decay"]),
        epochs_per_task=int(train["epochs_per_task"]),
        loss_kind=train["loss_kind"],
        betas=tuple(train["betas"]),
        epsilon=float(train["epsilon"]),
        seed=seed,
        batch_size=train["batch_size"],
        ewc=ewc_cfg,
        reset_optimizer_per_task=bool(train["reset_optimizer_per_task"]),
    )


def _init_net(cfg: dict, grid_size: int, seed: int, dims=None):
    net_cfg = cfg["network"]
    return init_kan(
        list(dims if dims is not None else net_cfg["dims"]),
        grid_size=grid_size,
        order=int(net_cfg["order"]),
        grid_range=tuple(net_cfg["grid_range"]),
        seed=seed,
        base_weight_scale=float(net_cfg["base_weight_scale"]),
        spline_weight_scale=float(net_cfg["spline_weight_scale"]),
        noise_scale=float(net_cfg["noise_scale"]),
    )


# --- per-cell runners (top level, picklable) --------------------------------


def _cell_addition(args: dict) -> dict:
    cfg, grid, seed = args["cfg"], args["grid"], args["seed"]
    tasks = gen_binary_tasks() if cfg["kind"] == "binary-add" else gen_decimal_tasks()
    net = _init_net(cfg, grid, seed)
    result = train_sequence(net, tasks, _train_config(cfg, seed))
    forgetting = result.ledger.forgetting()
    return {
        "grid": grid,
        "seed": seed,
        "loss_matrix": result.ledger.loss.tolist(),
        "accuracy_matrix": result.ledger.accuracy.tolist(),
        "initial_losses": result.initial_losses.tolist(),
        "epoch_losses": result.epoch_losses.tolist(),
        "epoch_task": result.epoch_task.tolist(),
        "forgetting": forgetting.tolist(),
        "network_meta": {
            "dims": net.dims,
            "grid_size": grid,
            "order": int(cfg["network"]["order"]),
            "grid_range": list(cfg["network"]["grid_range"]),
        },
        "final_checkpoint": result.checkpoints[-1].flatten().tolist(),
    }


def _cell_pair_ratio(args: dict) -> dict:
    cfg, grid, seed = args["cfg"], args["grid"], args["seed"]
    res = run_pair_retention(
        grid,
        seed,
        dims=cfg["network"]["dims"],
        epochs=int(cfg["training"]["epochs_per_task"]),
        learning_rate=float(cfg["training"]["learning_rate"]),
        weight_decay=float(cfg["training"]["weight_decay"]),
        threshold=float(cfg["analysis"]["threshold"]),
        bins=int(cfg["analysis"]["bins"]),
        batch_size=cfg["training"]["batch_size"],
    )
    return {"grid": grid, "seed": seed, "rows": res.rows}


def _cell_cumulative_ratio(args: dict) -> dict:
    cfg, grid, seed = args["cfg"], args["grid"], args["seed"]
    res = run_cumulative_retention(
        grid,
        seed,
        dims=cfg["network"]["dims"],
        epochs=int(cfg["training"]["epochs_per_task"]),
        learning_rate=float(cfg["training"]["learning_rate"]),
        weight_decay=float(cfg["training"]["weight_decay"]),
        threshold=float(cfg["analysis"]["threshold"]),
        bins=int(cfg["analysis"]["bins"]),
        batch_size=cfg["training"]["batch_size"],
    )
    return {"grid": grid, "seed": seed, "rows": res.rows}


def _load_image_corpus(cfg: dict):
    data = cfg["data"]
    if data["images"] and data["labels"]:
        return load_mnist_idx(data["images"], data["labels"])
    images_path, labels_path = ensure_synthetic_corpus(
        data["synthetic_dir"], n_per_class=int(data["synthetic_per_class"])
    )
    return load_mnist_idx(images_path, labels_path)


def _cell_dimension_ratio(args: dict) -> dict:
    cfg, seed = args["cfg"], args["seed"]
    q, shape = args["q"], tuple(args["shape"])
    images, labels = _load_image_corpus(cfg)
    row = run_dimension_retention_cell(
        images,
        labels,
        quantize_levels=q,
        shape=shape,
        seed=seed,
        hidden_dims=list(cfg["data"]["hidden_dims"]),
        grid_size=int(cfg["network"]["grid_size"]),
        epochs=int(cfg["training"]["epochs_per_task"]),
        learning_rate=float(cfg["training"]["learning_rate"]),
        weight_decay=float(cfg["training"]["weight_decay"]),
        batch_size=cfg["training"]["batch_size"],
        n_per_class=int(cfg["data"]["n_per_class"]),
    )
    return {
        "seed": seed,
        "q": q,
        "shape": list(shape),
        "intrinsic_dim": row.intrinsic_dim,
        "F_1": row.forgetting_first_task,
        "ratio": row.ratio,
    }


def _cell_mnist_cl(args: dict) -> dict:
    cfg, seed = args["cfg"], args["seed"]
    images, labels = _load_image_corpus(cfg)
    from .tasks import ImagePreprocessSpec, build_image_tasks, preprocess_images

    q, shape = cfg["data"]["configs"][0]
    spec = ImagePreprocessSpec(int(q), tuple(shape))
    flat = preprocess_images(images, spec)
    tasks = build_image_tasks(
        flat, labels, n_per_class=int(cfg["data"]["n_per_class"]), seed=seed
    )
    dims = [spec.pixel_count, *cfg["data"]["hidden_dims"], 10]
    net = _init_net(cfg, int(cfg["network"]["grid_size"]), seed, dims=dims)
    result = train_sequence(net, tasks, _train_config(cfg, seed))
    return {
        "seed": seed,
        "loss_matrix": result.ledger.loss.tolist(),
        "accuracy_matrix": result.ledger.accuracy.tolist(),
        "forgetting": result.ledger.forgetting().tolist(),
        "epoch_losses": result.epoch_losses.tolist(),
        "epoch_task": result.epoch_task.tolist(),
    }


_CELL_RUNNERS = {
    "binary-add": _cell_addition,
    "decimal-add": _cell_addition,
    "pair-overlap-ratio": _cell_pair_ratio,
    "cumulative-overlap-ratio": _cell_cumulative_ratio,
    "intrinsic-dim-ratio": _cell_dimension_ratio,
    "mnist-cl": _cell_mnist_cl,
}


def _cells_for(cfg: dict, seeds: list[int]) -> list[dict]:
    kind = cfg["kind"]
    cells = []
    if kind in ("binary-add", "decimal-add", "pair-overlap-ratio",
                "cumulative-overlap-ratio"):
        for grid in _grid_list(cfg):
            for seed in seeds:
                cells.append({"cfg": cfg, "grid": grid, "seed": seed})
    elif kind == "intrinsic-dim-ratio":
        for q, shape in cfg["data"]["configs"]:
            for seed in seeds:
                cells.append({"cfg": cfg, "q": int(q), "shape": shape, "seed": seed})
    elif kind == "mnist-cl":
        for seed in seeds:
            cells.append({"cfg": cfg, "seed": seed})
    return cells


def _run_cells(kind: str, cells: list[dict], workers: int) -> list[dict]:
    runner = _CELL_RUNNERS[kind]
    if workers <= 1 or len(cells) <= 1:
        return [runner(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(runner, cells))


# --- Monte Carlo experiment bodies ------------------------------------------


def _run_interval_mc(cfg: dict, seeds: list[int]) -> dict:
    mc = cfg["mc"]
    rows = []
    for seed in seeds:
        mc_cfg = McConfig(trials=int(mc["trials"]), seed=seed)
        for i, s_i in enumerate(mc["s_values"]):
            for j, s_j in enumerate(mc["s_values"]):
                res = mc_expected_overlap(float(s_i), float(s_j), mc_cfg, _path=(i, j))
                rows.append(
                    {
                        "seed": seed,
                        "s_i": s_i,
                        "s_j": s_j,
                        "trials": res.trials,
                        "mean": res.mean,
                        "std_error": res.std_error,
                        "analytic_expectation": res.analytic_expectation,
                        "z_score": res.z_score,
                    }
                )
    return {"rows": rows}


def _run_saturation_mc(cfg: dict, seeds: list[int]) -> dict:
    mc = cfg["mc"]
    base = float(mc["base_length"])
    later = mc["later_lengths"] or [base] * 50
    curves = []
    for seed in seeds:
        res = saturation_curve(base, [float(v) for v in later],
                               McConfig(trials=int(mc["trials"]), seed=seed))
        curves.append(
            {
                "seed": seed,
                "task_counts": res.task_counts.tolist(),
                "mean_union": res.mean_union.tolist(),
                "std_errors": res.std_errors.tolist(),
                "bound_slack": res.bound_slack.tolist(),
                "plateau_onset": res.plateau_onset,
            }
        )
    return {"base_length": base, "curves": curves}


def _run_dimension_mc(cfg: dict, seeds: list[int]) -> dict:
    mc = cfg["mc"]
    rows = []
    for seed in seeds:
        mc_cfg = McConfig(trials=int(mc["trials"]), seed=seed)
        for d_i, d_j in mc["d_pairs"]:
            res = dimension_scaling(int(d_i), int(d_j), mc["r_sweep"], mc_cfg)
            rows.append(
                {
                    "seed": seed,
                    "d_i": d_i,
                    "d_j": d_j,
                    "r_sweep": res.sweep.tolist(),
                    "means": res.means.tolist(),
                    "std_errors": res.std_errors.tolist(),
                    "slope": res.fit.slope,
                    "slope_stderr": res.fit.slope_stderr,
                    "residuals": res.fit.residuals.tolist(),
                    "expected_slope": res.expected_slope,
                }
            )
    return {"rows": rows}


def _run_fragmentation_mc(cfg: dict, seeds: list[int]) -> dict:
    mc = cfg["mc"]
    rows = []
    for seed in seeds:
        mc_cfg = McConfig(trials=int(mc["trials"]), seed=seed)
        d_i, d_j = (int(v) for v in mc["dims"])
        res_i, res_j = fragmentation_scaling(
            d_i, d_j, float(mc["r"]), mc["k_sweep"], mc_cfg
        )
        for axis, res, expected in (("k_i", res_i, -d_i), ("k_j", res_j, -d_j)):
            rows.append(
                {
                    "seed": seed,
                    "axis": axis,
                    "d_i": d_i,
                    "d_j": d_j,
                    "r": mc["r"],
                    "k_sweep": res.sweep.tolist(),
                    "means": res.means.tolist(),
                    "std_errors": res.std_errors.tolist(),
                    "slope": res.fit.slope,
                    "slope_stderr": res.fit.slope_stderr,
                    "expected_slope": float(expected),
                }
            )
    return {"rows": rows}


# --- emission ----------------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    version: str
    started: str
    finished: str
    seeds: list[int]
    files: dict[str, str] = field(default_factory=dict)
    status: str = "complete"

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "seeds": self.seeds,
            "files": self.files,
            "status": self.status,
        }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _emit_addition(bundle: dict, out: Path) -> None:
    from .ledger import ForgettingLedger
    from .network import network_from_flat

    summary_rows = []
    by_grid: dict[int, list[dict]] = {}
    for cell in bundle["cells"]:
        by_grid.setdefault(cell["grid"], []).append(cell)
        tag = f"grid{cell['grid']}_seed{cell['seed']}"
        ledger = ForgettingLedger(
            np.array(cell["loss_matrix"]), np.array(cell["accuracy_matrix"])
        )
        ledger_to_csv(ledger, out / f"ledger_{tag}.csv")
        meta = cell["network_meta"]
        final_net = network_from_flat(
            meta["dims"], meta["grid_size"], meta["order"],
            tuple(meta["grid_range"]), np.array(cell["final_checkpoint"]),
        )
        save_checkpoint(out / f"final_{tag}.ckpt", final_net, seed=cell["seed"])
        curves = np.array(cell["epoch_losses"])
        # Plot-ready two-column files: epoch index vs per-task loss.
        for task_idx in range(curves.shape[1]):
            lines = [
                f"{epoch + 1} {_fmt(float(curves[epoch, task_idx]))}"
                for epoch in range(curves.shape[0])
            ]
            (out / f"curve_{tag}_task{task_idx + 1}.dat").write_text(
                "\n".join(lines) + "\n", encoding="ascii"
            )
    for grid, cells in sorted(by_grid.items()):
        forgettings = np.array([c["forgetting"] for c in cells])
        summary_rows.append(
            [
                grid,
                len(cells),
                _fmt(float(forgettings.sum(axis=1).mean())),
                _fmt(float(forgettings.sum(axis=1).std())),
                _fmt(float(np.abs(forgettings).max())),
            ]
            + [_fmt(float(v)) for v in forgettings.mean(axis=0)]
        )
    n_tasks = len(bundle["cells"][0]["forgetting"])
    _write_csv(
        out / "forgetting_summary.csv",
        ["grid", "n_seeds", "mean_sum_forgetting", "std_sum_forgetting",
         "max_abs_forgetting"] + [f"mean_F_{i + 1}" for i in range(n_tasks)],
        summary_rows,
    )


def _emit_ratio(bundle: dict, out: Path, kind: str) -> None:
    reference = bundle.get("reference") or {}
    ref_rows = {tuple(r.get("key", [])): r for r in reference.get("rows", [])}
    if kind == "pair-overlap-ratio":
        header = ["task_i", "task_j", "grid", "seed", "F_i", "delta", "ratio",
                  "flag", "reference_F_i", "reference_ratio"]
        per_seed_rows = []
        grouped: dict[tuple, list[dict]] = {}
        for cell in bundle["cells"]:
            for row in cell["rows"]:
                key = (row["task_i"], row["task_j"], row["grid"])
                grouped.setdefault(key, []).append(row)
                ref = ref_rows.get((row["task_i"], row["task_j"], row["grid"]), {})
                per_seed_rows.append(
                    [row["task_i"], row["task_j"], row["grid"], cell["seed"],
                     _fmt(row["F_i"]), _fmt(row["delta"]), _fmt(row["ratio"]),
                     row.get("flag", ""),
                     _fmt(ref.get("F_i")), _fmt(ref.get("ratio"))]
                )
        _write_csv(out / "pair_ratio_rows.csv", header, per_seed_rows)

        agg_rows = []
        cv_rows = []
        by_grid: dict[int, list[float]] = {}
        for (task_i, task_j, grid), rows in sorted(grouped.items()):
            ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
            mean_ratio = float(np.mean(ratios)) if ratios else None
            agg_rows.append(
                [task_i, task_j, grid, len(rows),
                 _fmt(float(np.mean([r["F_i"] for r in rows]))),
                 _fmt(float(np.mean([r["delta"] for r in rows]))),
                 _fmt(mean_ratio)]
            )
            if mean_ratio is not None:
                by_grid.setdefault(grid, []).append(mean_ratio)
        for grid, ratios in sorted(by_grid.items()):
            cv = coefficient_of_variation(ratios) if len(ratios) > 1 else 0.0
            cv_rows.append([grid, len(ratios), _fmt(cv)])
        _write_csv(
            out / "pair_ratio_mean.csv",
            ["task_i", "task_j", "grid", "n_seeds", "mean_F_i", "mean_delta",
             "mean_ratio"],
            agg_rows,
        )
        _write_csv(out / "pair_ratio_cv.csv", ["grid", "n_pairs", "cv"], cv_rows)
    else:
        header = ["task_i", "later_tasks", "grid", "seed", "F_i", "sum_mu",
                  "ratio", "reference_F_i", "reference_ratio"]
        per_seed_rows = []
        grouped = {}
        for cell in bundle["cells"]:
            for row in cell["rows"]:
                key = (row["task_i"], row["grid"])
                grouped.setdefault(key, []).append(row)
                ref = ref_rows.get((row["task_i"], row["grid"]), {})
                per_seed_rows.append(
                    [row["task_i"], row["later_tasks"], row["grid"], cell["seed"],
                     _fmt(row["F_i"]), _fmt(row["sum_mu"]), _fmt(row["ratio"]),
                     _fmt(ref.get("F_i")), _fmt(ref.get("ratio"))]
                )
        _write_csv(out / "cumulative_ratio_rows.csv", header, per_seed_rows)
        agg_rows, cv_rows = [], []
        by_grid = {}
        for (task_i, grid), rows in sorted(grouped.items()):
            ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
            mean_ratio = float(np.mean(ratios)) if ratios else None
            agg_rows.append(
                [task_i, grid, len(rows),
                 _fmt(float(np.mean([r["F_i"] for r in rows]))),
                 _fmt(float(np.mean([r["sum_mu"] for r in rows]))),
                 _fmt(mean_ratio)]
            )
            if mean_ratio is not None:
                by_grid.setdefault(grid, []).append(mean_ratio)
        for grid, ratios in sorted(by_grid.items()):
            cv = coefficient_of_variation(ratios) if len(ratios) > 1 else 0.0
            cv_rows.append([grid, len(ratios), _fmt(cv)])
        _write_csv(
            out / "cumulative_ratio_mean.csv",
            ["task_i", "grid", "n_seeds", "mean_F_i", "mean_sum_mu", "mean_ratio"],
            agg_rows,
        )
        _write_csv(out / "cumulative_ratio_cv.csv", ["grid", "n_rows", "cv"], cv_rows)


def _emit_dimension_ratio(bundle: dict, out: Path) -> None:
    header = ["quantize_levels", "shape_h", "shape_w", "intrinsic_dim", "seed",
              "F_1", "log10_F1_over_d"]
    rows = []
    grouped: dict[tuple, list[dict]] = {}
    for cell in bundle["cells"]:
        key = (cell["q"], tuple(cell["shape"]))
        grouped.setdefault(key, []).append(cell)
        rows.append(
            [cell["q"], cell["shape"][0], cell["shape"][1],
             _fmt(cell["intrinsic_dim"]), cell["seed"], _fmt(cell["F_1"]),
             _fmt(cell["ratio"])]
        )
    _write_csv(out / "dimension_ratio_rows.csv", header, rows)

    agg_rows = []
    mean_ratios = []
    for (q, shape), cells in sorted(grouped.items()):
        ratios = [c["ratio"] for c in cells if c["ratio"] is not None]
        mean_ratio = float(np.mean(ratios)) if ratios else None
        if mean_ratio is not None:
            mean_ratios.append(mean_ratio)
        agg_rows.append(
            [q, shape[0], shape[1], _fmt(cells[0]["intrinsic_dim"]), len(cells),
             _fmt(float(np.mean([c["F_1"] for c in cells]))), _fmt(mean_ratio)]
        )
    _write_csv(
        out / "dimension_ratio_mean.csv",
        ["quantize_levels", "shape_h", "shape_w", "intrinsic_dim", "n_seeds",
         "mean_F_1", "mean_ratio"],
        agg_rows,
    )
    cv = coefficient_of_variation(mean_ratios) if len(mean_ratios) > 1 else 0.0
    _write_csv(
        out / "dimension_ratio_cv.csv",
        ["n_configs", "cv", "log_base"],
        [[len(mean_ratios), _fmt(cv), 10]],
    )


def _emit_mnist_cl(bundle: dict, out: Path) -> None:
    from .ledger import ForgettingLedger

    rows = []
    for cell in bundle["cells"]:
        ledger = ForgettingLedger(
            np.array(cell["loss_matrix"]), np.array(cell["accuracy_matrix"])
        )
        ledger_to_csv(ledger, out / f"ledger_seed{cell['seed']}.csv")
        rows.append([cell["seed"]] + [_fmt(float(v)) for v in cell["forgetting"]])
    n_tasks = len(bundle["cells"][0]["forgetting"])
    _write_csv(
        out / "forgetting_by_seed.csv",
        ["seed"] + [f"F_{i + 1}" for i in range(n_tasks)],
        rows,
    )


def _emit_interval_mc(bundle: dict, out: Path) -> None:
    _write_csv(
        out / "interval_overlap.csv",
        ["seed", "s_i", "s_j", "trials", "mean", "std_error",
         "analytic_expectation", "z_score"],
        [
            [r["seed"], _fmt(r["s_i"]), _fmt(r["s_j"]), r["trials"],
             _fmt(r["mean"]), _fmt(r["std_error"]),
             _fmt(r["analytic_expectation"]), _fmt(r["z_score"])]
            for r in bundle["rows"]
        ],
    )


def _emit_saturation_mc(bundle: dict, out: Path) -> None:
    rows = []
    for curve in bundle["curves"]:
        for idx, t in enumerate(curve["task_counts"]):
            rows.append(
                [curve["seed"], t, _fmt(curve["mean_union"][idx]),
                 _fmt(curve["std_errors"][idx]), _fmt(curve["bound_slack"][idx])]
            )
    _write_csv(
        out / "saturation_curve.csv",
        ["seed", "task_count", "mean_union", "std_error", "bound_slack"],
        rows,
    )
    _write_csv(
        out / "saturation_summary.csv",
        ["seed", "plateau_onset", "base_length"],
        [[c["seed"], c["plateau_onset"], _fmt(bundle["base_length"])]
         for c in bundle["curves"]],
    )


def _emit_scaling_mc(bundle: dict, out: Path, stem: str) -> None:
    point_rows, fit_rows = [], []
    for row in bundle["rows"]:
        sweep_key = "r_sweep" if "r_sweep" in row else "k_sweep"
        axis = row.get("axis", "r")
        for idx, x in enumerate(row[sweep_key]):
            point_rows.append(
                [row["seed"], axis, row["d_i"], row["d_j"], _fmt(x),
                 _fmt(row["means"][idx]), _fmt(row["std_errors"][idx])]
            )
        fit_rows.append(
            [row["seed"], axis, row["d_i"], row["d_j"], _fmt(row["slope"]),
             _fmt(row["slope_stderr"]), _fmt(row["expected_slope"])]
        )
    _write_csv(
        out / f"{stem}_points.csv",
        ["seed", "axis", "d_i", "d_j", "sweep_value", "mean", "std_error"],
        point_rows,
    )
    _write_csv(
        out / f"{stem}_fits.csv",
        ["seed", "axis", "d_i", "d_j", "slope", "slope_stderr", "expected_slope"],
        fit_rows,
    )


def emit_reports(bundle: dict, out: Path) -> None:
    """Write the table-shaped CSVs and curve files for a result bundle."""
    kind = bundle["kind"]
    if kind in ("binary-add", "decimal-add"):
        _emit_addition(bundle, out)
    elif kind in ("pair-overlap-ratio", "cumulative-overlap-ratio"):
        _emit_ratio(bundle, out, kind)
    elif kind == "intrinsic-dim-ratio":
        _emit_dimension_ratio(bundle, out)
    elif kind == "mnist-cl":
        _emit_mnist_cl(bundle, out)
    elif kind == "interval-overlap-mc":
        _emit_interval_mc(bundle, out)
    elif kind == "saturation-mc":
        _emit_saturation_mc(bundle, out)
    elif kind == "dimension-mc":
        _emit_scaling_mc(bundle, out, "dimension_scaling")
    elif kind == "fragmentation-mc":
        _emit_scaling_mc(bundle, out, "fragmentation_scaling")
    else:
        raise ConfigError(f"no emitter for kind {kind!r}")


def load_bundle(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def run_experiment(
    config: dict,
    out_dir,
    workers: int = 1,
    seed_offset: int = 0,
) -> RunManifest:
    """Execute a validated config and atomically emit its report directory."""
    cfg, diagnostics = validate_config(config)
    if diagnostics:
        raise ConfigError("; ".join(diagnostics))
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise FileExistsError(f"output directory already exists: {out_dir}")
    out_dir.parent.mkdir(parents=True, exist_ok=True)

    seeds = [s + seed_offset for s in cfg["seeds"]]
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    kind = cfg["kind"]

    if kind in _CELL_RUNNERS:
        cells = _cells_for(cfg, seeds)
        results = _run_cells(kind, cells, workers)
        bundle = {"kind": kind, "cells": results, "reference": cfg.get("reference")}
    elif kind == "interval-overlap-mc":
        bundle = {"kind": kind, **_run_interval_mc(cfg, seeds)}
    elif kind == "saturation-mc":
        bundle = {"kind": kind, **_run_saturation_mc(cfg, seeds)}
    elif kind == "dimension-mc":
        bundle = {"kind": kind, **_run_dimension_mc(cfg, seeds)}
    elif kind == "fragmentation-mc":
        bundle = {"kind": kind, **_run_fragmentation_mc(cfg, seeds)}
    else:
        raise ConfigError(f"unhandled experiment kind {kind!r}")

    staging = Path(tempfile.mkdtemp(prefix=out_dir.name + ".", dir=out_dir.parent))
    try:
        with open(staging / "bundle.json", "w", encoding="utf-8") as fh:
            json.dump(bundle, fh)
        emit_reports(bundle, staging)
        with open(staging / "config_echo.json", "w", encoding="utf-8") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)

        manifest = RunManifest(
            config=cfg,
            version=__version__,
            started=started,
            finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
            seeds=seeds,
            files={
                p.name: _sha256(p)
                for p in sorted(staging.iterdir())
                if p.is_file()
            },
        )
        with open(staging / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        os.replace(staging, out_dir)
    except BaseException:
        import shutil

        shutil.rmtree(staging, ignore_errors=True)
        raise
    return manifest
