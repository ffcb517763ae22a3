"""
ebm-lifecycle command line: train, sample, defend and report.
Every run writes manifest.json, a metrics CSV and a ledger entry into --out.
"""
import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import psutil

from .. import __version__
from ..core.banks import GeneratorSource, NoiseSource
from ..core.checkpoint import config_hash, load_checkpoint, save_checkpoint
from ..core.config import Config, PriorMode, Regime, RejuvenationKind, SampleInit, setup_logging
from ..core.datasets import ToyDataset, frozen_generator_fixture
from ..core.defense import evaluate_defense, example_stream, fit_classifier, pgd_attack
from ..core.energies import EnergyModel, ZeroEnergy, energy
from ..core.errors import ConfigError
from ..core.ledger import RunLedger
from ..core.metrics import (
    batch_diversity,
    empirical_pmf,
    gaussian_frechet,
    grid_boltzmann,
    kl_divergence,
    lifetime_stats,
    saturation_stat,
)
from ..core.models import ExperimentConfig, MetricsRow, RunManifest
from ..core.rng import RngStream
from ..core.router import DatasetRouter, EnergyRouter
from ..core.sampler import LangevinConfig, langevin_run
from ..core.trainer import LongrunTrainer, MidrunTrainer, ShortrunTrainer, TrainState, train_midrun

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "train-shortrun",
    "train-midrun",
    "train-longrun",
    "sample",
    "defend",
    "steady-state",
    "bank-stats",
)

TRAINERS = {
    Regime.SHORTRUN: ShortrunTrainer,
    Regime.MIDRUN: MidrunTrainer,
    Regime.LONGRUN: LongrunTrainer,
}


def parse_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    """
    Read and validate a TOML experiment document.

    Args:
        path: Config file
        seed: Overrides the document's seed when given

    Raises:
        ConfigError: If the file is unreadable or invalid (all problems listed)
    """
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    if seed is not None:
        raw["seed"] = seed
    return ExperimentConfig.from_dict(raw)


def write_csv(path: Path, rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({column: row.get(column, "") for column in columns})
    return path


def write_samples(path: Path, samples: np.ndarray) -> Path:
    columns = [f"x{i}" for i in range(samples.shape[1])]
    return write_csv(path, [dict(zip(columns, (repr(float(v)) for v in row))) for row in samples], columns)


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------

class RunContext:
    """Inputs and outputs of one subcommand invocation"""

    def __init__(self, subcommand: str, config: ExperimentConfig, out_dir: Path, resume: Optional[str] = None):
        self.subcommand = subcommand
        self.config = config
        self.out_dir = out_dir
        self.resume = resume
        self.rng = RngStream(config.seed)
        self.resolved: Dict[str, Any] = config.model_dump(mode="json")
        self._dataset: Optional[ToyDataset] = None

    @property
    def dataset(self) -> ToyDataset:
        if self._dataset is None:
            self._dataset = DatasetRouter.get_dataset(self.config.data.dataset)
        return self._dataset

    def frozen_generator(self):
        return frozen_generator_fixture(self.dataset, self.config.trainer.fixture_fit_steps, self.rng.child("fixture"))

    def checkpoint(self, required_for: str):
        path = self.config.output.checkpoint
        if not path:
            raise ConfigError([f"output.checkpoint: required for {required_for}"])
        return load_checkpoint(path)


def _initial_ebm(ctx: RunContext) -> Optional[EnergyModel]:
    section = ctx.config.energy
    if section.kind == "mlp":
        # trainers build their default network from the same stream
        return EnergyRouter.get_energy(
            "mlp", ctx.dataset.dim, ctx.rng.child("init-ebm").generator(), section.hidden, section.activation
        )
    return EnergyRouter.get_energy(section.kind, ctx.dataset.dim, dataset=ctx.dataset)


def _prior(ctx: RunContext, source_generator) -> Optional[EnergyModel]:
    section = ctx.config.energy
    if section.prior == PriorMode.NONE:
        return None
    if section.prior == PriorMode.CHECKPOINT:
        if not section.prior_checkpoint:
            raise ConfigError(["energy.prior_checkpoint: required when energy.prior = checkpoint"])
        return load_checkpoint(section.prior_checkpoint).state.ebm
    prior_cfg = ctx.config.prior_config()
    logger.info(f"Training prior energy for {prior_cfg.total_steps} steps")
    return train_midrun(prior_cfg, ctx.dataset, source_generator, ctx.rng.child("prior"))


def _sampling_energy(ctx: RunContext) -> EnergyModel:
    if ctx.config.output.checkpoint:
        return ctx.checkpoint(ctx.subcommand).state.ebm
    return EnergyRouter.get_energy(ctx.config.energy.kind, ctx.dataset.dim, ctx.rng.child("init-ebm").generator(),
                                   ctx.config.energy.hidden, ctx.config.energy.activation, ctx.dataset)


def _initial_states(ctx: RunContext, n: int, gen: np.random.Generator, state: Optional[TrainState]) -> np.ndarray:
    init = ctx.config.output.init
    if init == SampleInit.DATA:
        return ctx.dataset.sample(n, gen)
    if init == SampleInit.NOISE:
        bank = ctx.config.bank
        return NoiseSource(ctx.dataset.dim, bank.noise_distribution or "uniform", bank.noise_scale or 1.0).draw(n, gen)
    if state is None:
        raise ConfigError([f"output.init: {init.value} initialization needs output.checkpoint"])
    if init == SampleInit.GENERATOR:
        generator = state.generator or state.source_generator
        if generator is None:
            raise ConfigError(["output.init: the checkpoint holds no generator"])
        return GeneratorSource(generator).draw(n, gen)
    bank = state.bank if state.bank is not None else (state.dual.update if state.dual is not None else None)
    if bank is None:
        raise ConfigError(["output.init: the checkpoint holds no bank"])
    return bank.states[gen.choice(bank.capacity, size=n, replace=n > bank.capacity)].copy()


def _sample_summary(ctx: RunContext, samples: np.ndarray, model: EnergyModel) -> Dict[str, float]:
    mean_norm, out_of_bounds = saturation_stat(samples, ctx.dataset.bounds)
    summary = {
        "mean_energy": float(np.mean(energy(model, samples))),
        "mean_norm": mean_norm,
        "out_of_bounds_fraction": out_of_bounds,
    }
    if len(samples) > 1:
        summary["diversity"] = batch_diversity(samples)
    if len(samples) > samples.shape[1]:
        reference = ctx.dataset.sample(len(samples), ctx.rng.child("reference").generator())
        summary["frechet"] = gaussian_frechet(samples, reference)
    return summary


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _train(ctx: RunContext, regime: Regime) -> Dict[str, Any]:
    cfg = ctx.config.train_config(regime)
    ctx.resolved["train"] = cfg.model_dump(mode="json")
    trainer = TRAINERS[regime](cfg, ctx.dataset, ctx.rng)

    if ctx.resume:
        saved = load_checkpoint(ctx.resume)
        if saved.config_hash != config_hash(ctx.resolved["train"]) or saved.seed != ctx.config.seed:
            raise ConfigError([f"resume: {ctx.resume} was written with a different configuration or seed"])
        state = saved.state
        logger.info(f"Resuming {regime.value} training at step {state.step}")
    else:
        ebm = _initial_ebm(ctx)
        if regime == Regime.SHORTRUN:
            state = trainer.init_state(ebm)
        else:
            source = ctx.frozen_generator() if cfg.rejuvenation_source == RejuvenationKind.GENERATOR else None
            if regime == Regime.MIDRUN:
                state = trainer.init_state(ebm, source)
            else:
                state = trainer.init_state(ebm, source, _prior(ctx, source))

    checkpoints = ctx.out_dir / "checkpoints"

    def on_checkpoint(current: TrainState) -> None:
        save_checkpoint(current, checkpoints / f"step-{current.step:08d}.eblc", cfg, ctx.config.seed)

    trainer.run(state, on_checkpoint)
    final = save_checkpoint(state, ctx.out_dir / "checkpoint.eblc", cfg, ctx.config.seed)
    rows = [MetricsRow(**row).model_dump() for row in state.metrics]
    write_csv(ctx.out_dir / Config.METRICS_FILE, rows, Config.METRICS_COLUMNS)
    return {"steps": state.step, "checkpoint": str(final), "last_metrics": rows[-1] if rows else {}}


def _sample(ctx: RunContext) -> Dict[str, Any]:
    out = ctx.config.output
    saved = ctx.checkpoint("sample")
    gen = ctx.rng.child("sample-init").generator()
    x0 = _initial_states(ctx, out.num_samples, gen, saved.state)
    cfg = LangevinConfig(step_size=out.step_size, num_steps=out.mcmc_steps, temperature=out.temperature)
    samples = langevin_run(saved.state.ebm, x0, cfg, ctx.rng.child("sample")).final_state
    write_samples(ctx.out_dir / "samples.csv", samples)
    summary = _sample_summary(ctx, samples, saved.state.ebm)
    write_csv(ctx.out_dir / Config.METRICS_FILE, [dict(summary, step=out.mcmc_steps)], ["step", *summary])
    return summary


def _steady_state(ctx: RunContext) -> Dict[str, Any]:
    out = ctx.config.output
    state = ctx.checkpoint("steady-state").state if out.checkpoint else None
    model = state.ebm if state is not None else _sampling_energy(ctx)
    x0 = _initial_states(ctx, out.num_chains, ctx.rng.child("chain-init").generator(), state)
    cfg = LangevinConfig(step_size=out.step_size, num_steps=out.mcmc_steps, temperature=out.temperature,
                         record_every=out.record_every)
    traj = langevin_run(model, x0, cfg, ctx.rng.child("steady-state"))

    grid = ctx.dataset.default_grid()
    model_pmf = grid_boltzmann(model, grid, out.temperature) if grid is not None else None
    data_energy = ctx.dataset.density_energy()
    data_pmf = grid_boltzmann(data_energy, grid) if grid is not None and data_energy is not None else None
    reference = ctx.dataset.sample(max(out.num_chains, ctx.dataset.dim + 1), ctx.rng.child("reference").generator())

    rows: List[Dict[str, Any]] = []
    for step, states in zip(traj.recorded_steps, traj.recorded_states):
        mean_norm, out_of_bounds = saturation_stat(states, ctx.dataset.bounds)
        row = {"step": int(step), "mean_norm": mean_norm, "out_of_bounds_fraction": out_of_bounds, "kl_data": "", "kl_model": ""}
        row["frechet"] = gaussian_frechet(states, reference) if len(states) > states.shape[1] else ""
        if grid is not None:
            pmf = empirical_pmf(states, grid)
            row["kl_model"] = kl_divergence(pmf, model_pmf)
            if data_pmf is not None:
                row["kl_data"] = kl_divergence(pmf, data_pmf)
        rows.append(row)
    write_csv(ctx.out_dir / "trajectory.csv", rows,
              ["step", "kl_data", "kl_model", "frechet", "mean_norm", "out_of_bounds_fraction"])

    keep = traj.recorded_steps >= out.histogram_burn_in
    if out.mcmc_steps > 0:
        keep &= traj.recorded_steps > 0
    pooled = traj.recorded_states[keep].reshape(-1, ctx.dataset.dim)
    summary: Dict[str, Any] = {"steps": out.mcmc_steps, "chains": out.num_chains, "pooled_states": int(len(pooled))}
    if grid is not None:
        pmf = empirical_pmf(pooled, grid)
        summary["kl_model"] = kl_divergence(pmf, model_pmf)
        summary["overflow_fraction"] = pmf.overflow_fraction
        if data_pmf is not None:
            summary["kl_data"] = kl_divergence(pmf, data_pmf)
    write_csv(ctx.out_dir / Config.METRICS_FILE, [summary], list(summary))
    return summary


def _bank_stats(ctx: RunContext) -> Dict[str, Any]:
    state = ctx.checkpoint("bank-stats").state
    banks = {}
    if state.bank is not None:
        banks["bank"] = state.bank
    if state.dual is not None:
        banks["burn_in"] = state.dual.burn_in
        banks["update"] = state.dual.update
    if not banks:
        raise ConfigError(["output.checkpoint: the checkpoint holds no bank"])

    rows, summary = [], {"step": state.step}
    for name, bank in banks.items():
        stats = lifetime_stats(bank, bins=ctx.config.output.lifetime_bins)
        summary[name] = {
            "capacity": bank.capacity,
            "events": stats.events,
            "mean_lifetime": None if stats.empty else stats.mean,
            "mean_current_lifetime": float(np.mean(bank.lifetimes)),
            "rejuvenated_slots": int(np.count_nonzero(bank.origin)),
        }
        for low, high, count in zip(stats.edges[:-1], stats.edges[1:], stats.counts):
            rows.append({"bank": name, "bin_low": float(low), "bin_high": float(high), "count": int(count)})
    if state.dual is not None:
        summary["promotions"] = state.dual.promotions
    write_csv(ctx.out_dir / Config.METRICS_FILE, rows, ["bank", "bin_low", "bin_high", "count"])
    return summary


def _defend(ctx: RunContext) -> Dict[str, Any]:
    section = ctx.config.defense
    defense_cfg = ctx.config.defense_config()
    attack_cfg = ctx.config.attack_config()
    ctx.resolved["attack"] = attack_cfg.model_dump(mode="json")
    ctx.resolved["purification"] = defense_cfg.model_dump(mode="json")
    if defense_cfg.steps > 0:
        ebm = _sampling_energy(ctx)
    else:
        ebm = ZeroEnergy(ctx.dataset.dim)

    classifier = fit_classifier(
        ctx.dataset, section.classifier_hidden, section.classifier_steps, section.classifier_lr, ctx.rng.child("classifier")
    )
    x, y = ctx.dataset.sample_labeled(section.num_examples, ctx.rng.child("examples").generator())
    attack_rng = ctx.rng.child("defend")
    record = evaluate_defense(x, y, classifier, ebm, attack_cfg, defense_cfg, attack_rng, bounds=ctx.dataset.bounds)

    undefended = [
        pgd_attack(classifier, x[i], int(y[i]), attack_cfg, example_stream(attack_rng, i), ctx.dataset.bounds)[1] is None
        for i in range(len(x))
    ]
    write_csv(ctx.out_dir / Config.METRICS_FILE, record.rows(),
              ["example_id", "label", "natural_prediction", "robust", "first_break_step", "error"])
    return {
        "examples": len(record.results),
        "natural_accuracy": record.natural_accuracy,
        "robust_accuracy": record.robust_accuracy,
        "undefended_robust_accuracy": float(np.mean(undefended)),
        "failed_examples": sum(1 for r in record.results if r.error),
    }


HANDLERS: Dict[str, Callable[[RunContext], Dict[str, Any]]] = {
    "train-shortrun": lambda ctx: _train(ctx, Regime.SHORTRUN),
    "train-midrun": lambda ctx: _train(ctx, Regime.MIDRUN),
    "train-longrun": lambda ctx: _train(ctx, Regime.LONGRUN),
    "sample": _sample,
    "defend": _defend,
    "steady-state": _steady_state,
    "bank-stats": _bank_stats,
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def write_error(out_dir: Path, exc: BaseException) -> Path:
    """Machine-readable error record"""
    details: Dict[str, Any] = {}
    if isinstance(exc, ConfigError):
        details["errors"] = exc.errors
    for attr in ("chain", "step"):
        if getattr(exc, attr, None) is not None:
            details[attr] = getattr(exc, attr)
    path = out_dir / Config.ERROR_FILE
    path.write_text(json.dumps({"error_type": type(exc).__name__, "message": str(exc), "details": details}, indent=2))
    return path


def run(subcommand: str, config: ExperimentConfig, out_dir: str, resume: Optional[str] = None) -> int:
    """
    Execute one subcommand and record it.

    Returns:
        0 on success, 2 on configuration errors, 1 on any other failure
    """
    if subcommand not in HANDLERS:
        raise ValueError(f"Unknown subcommand: {subcommand}. Valid options: {list(SUBCOMMANDS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(subcommand, config, out, resume)
    run_id = f"{subcommand}_{datetime.now().strftime('%Y%m%d_%H%M%S_%f')}"
    logger.info(f"Starting {run_id} (seed {config.seed}) -> {out}")

    started = time.perf_counter()
    summary: Dict[str, Any] = {}
    error: Optional[BaseException] = None
    try:
        summary = HANDLERS[subcommand](ctx)
    except Exception as exc:
        error = exc
        logger.exception(f"{subcommand} failed")
        write_error(out, exc)

    manifest = RunManifest(
        run_id=run_id,
        subcommand=subcommand,
        timestamp=datetime.now(),
        seed=config.seed,
        config=ctx.resolved,
        config_hash=config_hash(ctx.resolved),
        code_version=__version__,
        wall_time_s=time.perf_counter() - started,
        rss_mb=psutil.Process().memory_info().rss / (1024 * 1024),
        summary=summary,
        success=error is None,
        error_message=None if error is None else str(error),
    )
    (out / Config.MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2))
    RunLedger(str(out / Config.LEDGER_FILE)).record_run(manifest)

    if error is None:
        logger.info(f"Finished {run_id} in {manifest.wall_time_s:.1f}s")
        return 0
    return 2 if isinstance(error, ConfigError) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebm-lifecycle",
        description="Train energy-based models for shortrun, midrun and longrun sampling",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, help="TOML experiment document")
        sub.add_argument("--out", required=True, help="Output directory")
        sub.add_argument("--resume", default=None, help="Checkpoint to resume training from")
        sub.add_argument("--seed", type=int, default=None, help="Override the document's seed")
        sub.add_argument("--log-level", default=None, help="Logging level (default: EBM_LOG_LEVEL or INFO)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        Config.validate()
        if args.resume and not args.subcommand.startswith("train-"):
            raise ConfigError([f"--resume only applies to training subcommands, not {args.subcommand}"])
        config = parse_config(args.config, seed=args.seed)
    except ConfigError as exc:
        logger.error(f"Invalid configuration: {exc}")
        write_error(out, exc)
        return 2
    except ValueError as exc:
        logger.error(str(exc))
        write_error(out, exc)
        return 2
    return run(args.subcommand, config, str(out), resume=args.resume)


if __name__ == "__main__":
    sys.exit(main())
