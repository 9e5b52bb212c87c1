"""Run orchestration: data generation, the four training modes, path
adaptation, cross-site evaluation, and the training-budget check.

A run directory is self-describing: resolved config, the supernet layout,
checkpoints, metrics.csv, and mode-specific artifacts. Re-running the
same config reproduces every file byte for byte.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import adaptation, checkpoint, data as datamod, report, supernet
from .config import ConfigError, ExperimentConfig
from .data import Case, SplitSet
from .evaluate import evaluate_dice
from .federation import Client, FLConfig, TrainSettings, run_federated
from .report import MetricRow


# ----------------------------------------------------------------------
# training budget check
# ----------------------------------------------------------------------

@dataclass
class BudgetCheck:
    path_count: int
    iterations: int
    expected_selections_per_path: float
    passed: bool
    multiplier_vs_baseline: float | None = None


def check_training_length(cfg: supernet.SupernetConfig, iterations: int,
                          batch_paths_per_step: int = 1,
                          baseline_iterations: int | None = None) -> BudgetCheck:
    """Expected uniform-sampling selections per path; passes at >= 1."""
    n = cfg.path_count
    expected = iterations * batch_paths_per_step / n
    mult = None
    if baseline_iterations:
        mult = iterations / baseline_iterations
    return BudgetCheck(path_count=n, iterations=iterations,
                       expected_selections_per_path=expected,
                       passed=expected >= 1.0, multiplier_vs_baseline=mult)


# ----------------------------------------------------------------------
# shared plumbing
# ----------------------------------------------------------------------

def build_supernet_config(cfg: ExperimentConfig) -> supernet.SupernetConfig:
    if cfg.supernet.config_file:
        return supernet.SupernetConfig.load(cfg.supernet.config_file)
    return supernet.config_by_name(
        cfg.supernet.preset,
        ndim=len(cfg.data.image_size),
        base_width=cfg.supernet.base_width,
        in_channels=cfg.supernet.in_channels,
        classes=cfg.supernet.classes,
    )


def generate_data(cfg: ExperimentConfig, data_dir=None) -> Path:
    """Render every site's cohort to disk, normalized when configured."""
    cfg.data.validate()
    root = Path(data_dir or cfg.data_dir)
    for profile in cfg.data.sites:
        cases = datamod.generate_site(profile, cfg.data.generation_seed,
                                      image_size=cfg.data.image_size)
        if cfg.data.normalize:
            cases = [datamod.normalize(c) for c in cases]
        datamod.save_site(root / profile.site_id, profile, cases)
    return root


def load_splits(cfg: ExperimentConfig) -> dict[str, SplitSet]:
    """Per-site splits from the on-disk cohorts, seeded by split_seed."""
    root = Path(cfg.data_dir)
    if not root.exists():
        raise ConfigError(f"config field 'data_dir': {root} does not exist "
                          "(run generate-data first)")
    splits: dict[str, SplitSet] = {}
    for profile in cfg.data.sites:
        site_dir = root / profile.site_id
        if not site_dir.exists():
            raise ConfigError(
                f"config field 'data.sites': no generated data for site "
                f"{profile.site_id!r} under {root}"
            )
        _, cases = datamod.load_site(site_dir)
        key = zlib.crc32(profile.site_id.encode())
        seed = int(np.random.default_rng([cfg.data.split_seed, key]).integers(0, 2 ** 31))
        splits[profile.site_id] = datamod.split(
            cases, seed=seed, fractions=cfg.data.split_fractions)
    return splits


def _pooled_split(splits: dict[str, SplitSet]) -> SplitSet:
    out = SplitSet()
    for sid in sorted(splits):
        out.train.extend(splits[sid].train)
        out.validation.extend(splits[sid].validation)
        out.test.extend(splits[sid].test)
    return out


def _train_settings(cfg: ExperimentConfig, sampling: bool) -> TrainSettings:
    t = cfg.train
    return TrainSettings(
        optimizer=t.optimizer, lr=t.lr, crops_per_image=t.crops_per_image,
        images_per_batch=t.images_per_batch, crop_size=t.crop_size,
        loss=t.loss, smooth=t.smooth, path_sampling=sampling,
        augment=t.augment, aug_shift=t.aug_shift, aug_contrast=t.aug_contrast,
        aug_noise=t.aug_noise,
    )


def _budget(cfg: ExperimentConfig, mode: str, n_clients: int):
    """(rounds, local_iterations) for one training run of ``mode``."""
    t = cfg.train
    mult = t.sn_train_multiplier if mode.startswith("sn") else 1
    if mode.endswith("fed"):
        return t.rounds * mult, t.local_iterations
    # local runs re-use the federated cadence so validation probing and
    # best-checkpoint retention behave identically
    total = t.iterations * mult
    chunk = min(t.local_iterations, total)
    return (total + chunk - 1) // chunk, chunk


def _validate_sn_budget(cfg: ExperimentConfig, sn_cfg: supernet.SupernetConfig,
                        mode: str, n_clients: int):
    if not mode.startswith("sn") or not cfg.train.path_sampling:
        return
    rounds, local_iters = _budget(cfg, mode, n_clients)
    draws = rounds * local_iters * (n_clients if mode.endswith("fed") else 1)
    chk = check_training_length(sn_cfg, draws)
    if not chk.passed:
        raise ConfigError(
            f"config field 'train.iterations': {draws} supernet steps cover "
            f"{chk.expected_selections_per_path:.3g} expected selections per "
            f"path ({chk.path_count} paths); need >= 1"
        )


def _eval_rows(model, path, site_id, cases, split_name, prefix="dice"):
    scores = evaluate_dice(model, path, cases)
    rows = [
        MetricRow(0, site_id, split_name, f"{prefix}/{c.case_id}", s)
        for c, s in zip(cases, scores)
    ]
    rows.append(MetricRow(0, site_id, split_name, f"{prefix}_mean",
                          float(np.mean(scores))))
    return rows


# ----------------------------------------------------------------------
# modes
# ----------------------------------------------------------------------

def run_train(cfg: ExperimentConfig) -> Path:
    mode = cfg.mode
    if mode not in ("unet-local", "unet-fed", "sn-local", "sn-fed"):
        raise ConfigError(f"config field 'mode': {mode!r} is not a training mode")
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)

    sn_cfg = build_supernet_config(cfg)
    splits = load_splits(cfg)
    if cfg.train.pool_sites:
        splits = {"central": _pooled_split(splits)}
    site_ids = sorted(splits)
    _validate_sn_budget(cfg, sn_cfg, mode, len(site_ids))

    base = supernet.build(sn_cfg, seed=cfg.seed)
    if mode.startswith("unet"):
        base = supernet.extract_subnetwork(base, base.default_path())
    init = base.state()
    settings = _train_settings(cfg, sampling=cfg.train.path_sampling)
    rounds, local_iters = _budget(cfg, mode, len(site_ids))

    rows: list[MetricRow] = []
    if mode.endswith("fed"):
        clients = [Client(sid, splits[sid], settings) for sid in site_ids]
        fl = FLConfig(rounds=rounds, local_iterations=local_iters,
                      weighting=cfg.train.weighting, seed=cfg.seed,
                      retain_best=cfg.train.retain_best)
        result = run_federated(fl, clients, base)
        rows.extend(MetricRow(r.round_index, r.client_id, r.split, r.metric,
                              r.value) for r in result.records)
        checkpoint.save(out / "checkpoints" / "global_final.ckpt",
                        result.final_params, meta={"round": rounds})
        for sid in site_ids:
            checkpoint.save(out / "checkpoints" / f"{sid}.ckpt",
                            result.best_params[sid],
                            meta={"round": result.best_round[sid]})
            base.load_state(result.best_params[sid])
            rows.extend(_eval_rows(base, base.default_path(), sid,
                                   splits[sid].test, "test"))
            rows.extend(_eval_rows(base, base.default_path(), sid,
                                   splits[sid].validation, "val_final"))
    else:
        for k, sid in enumerate(site_ids):
            base.load_state(init)
            client = Client(sid, splits[sid], settings)
            fl = FLConfig(rounds=rounds, local_iterations=local_iters,
                          weighting=cfg.train.weighting,
                          seed=int(np.random.default_rng(
                              [cfg.seed, k]).integers(0, 2 ** 31)),
                          retain_best=cfg.train.retain_best)
            result = run_federated(fl, [client], base)
            rows.extend(MetricRow(r.round_index, r.client_id, r.split, r.metric,
                                  r.value) for r in result.records)
            checkpoint.save(out / "checkpoints" / f"{sid}.ckpt",
                            result.best_params[sid],
                            meta={"round": result.best_round[sid]})
            base.load_state(result.best_params[sid])
            rows.extend(_eval_rows(base, base.default_path(), sid,
                                   splits[sid].test, "test"))
            rows.extend(_eval_rows(base, base.default_path(), sid,
                                   splits[sid].validation, "val_final"))

    report.write_rows(out / "metrics.csv", rows)
    sn_cfg.save(out / "supernet.yaml")
    cfg.save(out / "config.yaml")
    report.write_distribution_files(out)
    return out


def _load_run_model(run_dir: Path, site_id: str) -> supernet.SupernetModel:
    run_cfg = ExperimentConfig.load(run_dir / "config.yaml")
    sn_cfg = supernet.SupernetConfig.load(run_dir / "supernet.yaml")
    model = supernet.build(sn_cfg, seed=run_cfg.seed)
    if run_cfg.mode.startswith("unet"):
        model = supernet.extract_subnetwork(model, model.default_path())
    params, _ = checkpoint.load(run_dir / "checkpoints" / f"{site_id}.ckpt")
    model.load_state(params)
    return model


def run_adapt(cfg: ExperimentConfig) -> Path:
    cfg.validate(for_mode="adapt")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_run = Path(cfg.model_run)
    splits = load_splits(cfg)
    rows: list[MetricRow] = []
    for sid in sorted(splits):
        model = _load_run_model(model_run, sid)
        if cfg.adapt.method == "exhaustive":
            result = adaptation.adapt_exhaustive(model, splits[sid].validation,
                                                 budget=cfg.adapt.budget,
                                                 smooth=cfg.train.smooth)
        else:
            result = adaptation.adapt_gradient(model, splits[sid].validation,
                                               epochs=cfg.adapt.epochs,
                                               lr=cfg.adapt.lr,
                                               smooth=cfg.train.smooth)
        with open(out / f"adaptation-{sid}.yaml", "w") as f:
            yaml.safe_dump(result.to_dict(), f, sort_keys=False)
        rows.append(MetricRow(0, sid, "val", "dice_default", result.default_dice))
        rows.append(MetricRow(0, sid, "val", "dice_adapted", result.chosen_dice))
        rows.extend(_eval_rows(model, result.chosen_path, sid,
                               splits[sid].test, "test"))
    report.write_rows(out / "metrics.csv", rows)
    cfg.save(out / "config.yaml")
    report.write_distribution_files(out)
    return out


def _chosen_path(adapt_run: Path, site_id: str):
    with open(adapt_run / f"adaptation-{site_id}.yaml") as f:
        return tuple(yaml.safe_load(f)["chosen_path"])


def run_crosseval(cfg: ExperimentConfig) -> Path:
    """Every site's model scored on every site's test split."""
    cfg.validate(for_mode="crosseval")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_run = Path(cfg.model_run)
    adapt_run = Path(cfg.adapt_run) if cfg.adapt_run else None
    splits = load_splits(cfg)
    site_ids = sorted(splits)
    rows: list[MetricRow] = []
    for train_site in site_ids:
        model = _load_run_model(model_run, train_site)
        path = (_chosen_path(adapt_run, train_site) if adapt_run
                else model.default_path())
        for eval_site in site_ids:
            scores = evaluate_dice(model, path, splits[eval_site].test)
            rows.append(MetricRow(0, train_site, "test",
                                  f"xdice/{eval_site}", float(np.mean(scores))))
    report.write_rows(out / "metrics.csv", rows)
    cfg.save(out / "config.yaml")
    return out


def run(cfg: ExperimentConfig) -> Path:
    """Dispatch on cfg.mode; returns the populated run directory."""
    cfg.validate()
    if cfg.mode in ("unet-local", "unet-fed", "sn-local", "sn-fed"):
        return run_train(cfg)
    if cfg.mode == "adapt":
        return run_adapt(cfg)
    if cfg.mode == "crosseval":
        return run_crosseval(cfg)
    raise ConfigError(f"config field 'mode': unsupported mode {cfg.mode!r}")
