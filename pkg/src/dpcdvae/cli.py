"""Command-line driver: train, reconstruct, generate, evaluate, and
schedule-dump workflows.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
divergence.  All diagnostics go to standard error.  The environment
variable ``DPCV_SEED`` overrides the configured seed for any command.
"""

from __future__ import annotations

import os
import sys

import click

from .config import RunConfig, canonical_json
from .errors import ConfigError, DataError, DivergenceError
from .estimator import DPCDVAE
from .io import DatasetRecord, read_jsonl, write_jsonl
from .metrics import (
    CoverageThresholds,
    MatchCriteria,
    evaluate_generation,
    evaluate_ground_state,
    evaluate_reconstruction,
)
from .schedule import make_sigmoid_schedule

LOSS_CSV_COLUMNS = ("epoch", "L_total", "L_simple", "CE", "KLD", "latt", "comp", "N_a")


def _seed_override() -> int | None:
    raw = os.environ.get("DPCV_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"DPCV_SEED must be an integer, got {raw!r}") from None


def _load_config(path) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    seed = _seed_override()
    return cfg.with_seed(seed) if seed is not None else cfg


def _load_estimator(ckpt_path) -> DPCDVAE:
    est = DPCDVAE.load(ckpt_path)
    seed = _seed_override()
    if seed is not None:
        est.seed = seed
    return est


def _emit_report(report, out_path):
    text = canonical_json(report.to_dict())
    click.echo(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


@click.group(name="dpcdvae")
def cli():
    """Crystal-structure generative modeling with periodic diffusion."""


@cli.command()
@click.option("--config", "config_path", default=None, help="JSON run config.")
@click.option("--data", "data_path", required=True, help="Training JSONL dataset.")
@click.option("--out", "out_dir", required=True,
              help="Output directory for checkpoints and the loss CSV.")
def train(config_path, data_path, out_dir):
    """Train a model and write checkpoints plus a loss history CSV."""
    cfg = _load_config(config_path)
    records = read_jsonl(data_path)
    structures = [r.structure for r in records]
    os.makedirs(out_dir, exist_ok=True)
    est = DPCDVAE(**cfg.estimator_kwargs())
    est.fit(structures, checkpoint_dir=out_dir)
    with open(os.path.join(out_dir, "loss_history.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(LOSS_CSV_COLUMNS) + "\n")
        for row in est.loss_history_:
            fh.write(",".join(repr(row[c]) if c != "epoch" else str(row[c])
                              for c in LOSS_CSV_COLUMNS) + "\n")
    click.echo(f"trained {cfg.epochs} epochs on {len(structures)} structures; "
               f"model written to {out_dir}/model.dpcv", err=True)


@cli.command()
@click.option("--ckpt", "ckpt_path", required=True, help="Checkpoint file.")
@click.option("--data", "data_path", required=True, help="JSONL structures to reconstruct.")
@click.option("--out", "out_path", required=True, help="Output JSONL path.")
@click.option("--variant", type=click.Choice(["standard", "periodic"]),
              default=None, help="Override the configured reverse variant.")
def reconstruct(ckpt_path, data_path, out_path, variant):
    """Encode structures and re-sample them through the reverse chain."""
    est = _load_estimator(ckpt_path)
    records = read_jsonl(data_path)
    structures = est.reconstruct([r.structure for r in records], variant=variant)
    write_jsonl(out_path, [DatasetRecord(s, id=r.id)
                           for s, r in zip(structures, records)])
    click.echo(f"reconstructed {len(structures)} structures to {out_path}", err=True)


@cli.command()
@click.option("--ckpt", "ckpt_path", required=True, help="Checkpoint file.")
@click.option("--count", required=True, type=click.IntRange(min=1),
              help="Number of structures to generate.")
@click.option("--out", "out_path", required=True, help="Output JSONL path.")
@click.option("--variant", type=click.Choice(["standard", "periodic"]),
              default=None, help="Override the configured reverse variant.")
def generate(ckpt_path, count, out_path, variant):
    """Sample new structures from the latent prior."""
    est = _load_estimator(ckpt_path)
    structures = est.sample(count, variant=variant)
    write_jsonl(out_path, [DatasetRecord(s, id=f"gen-{i:05d}")
                           for i, s in enumerate(structures)])
    click.echo(f"generated {count} structures to {out_path}", err=True)


@cli.command()
@click.option("--mode", required=True,
              type=click.Choice(["recon", "gen", "ground-state"]))
@click.option("--config", "config_path", default=None, help="JSON run config.")
@click.option("--data", "data_path", default=None,
              help="Reference JSONL (recon mode).")
@click.option("--gen", "gen_path", default=None, help="Generated JSONL.")
@click.option("--ref", "ref_path", default=None,
              help="Reference JSONL (gen mode).")
@click.option("--relaxed", "relaxed_path", default=None,
              help="Relaxed JSONL with energies (ground-state mode).")
@click.option("--out", "out_path", default=None, help="Also write JSON here.")
def evaluate(mode, config_path, data_path, gen_path, ref_path, relaxed_path,
             out_path):
    """Compute a metrics report and print it as JSON."""
    cfg = _load_config(config_path)
    criteria = MatchCriteria(stol=cfg.stol, angle_tol=cfg.angle_tol, ltol=cfg.ltol)
    if gen_path is None:
        raise click.UsageError("evaluate requires --gen")
    gen_records = read_jsonl(gen_path)
    gen_structs = [r.structure for r in gen_records]

    if mode == "recon":
        if data_path is None:
            raise click.UsageError("recon mode requires --data")
        refs = [r.structure for r in read_jsonl(data_path)]
        report = evaluate_reconstruction(refs, gen_structs, criteria)
    elif mode == "gen":
        if ref_path is None:
            raise click.UsageError("gen mode requires --ref")
        refs = [r.structure for r in read_jsonl(ref_path)]
        thresholds = CoverageThresholds(cfg.cov_struct_threshold,
                                        cfg.cov_comp_threshold)
        report = evaluate_generation(gen_structs, refs, thresholds)
    else:
        if relaxed_path is None:
            raise click.UsageError("ground-state mode requires --relaxed")
        relaxed_records = read_jsonl(relaxed_path)
        if any(r.energy_per_atom is None for r in gen_records + relaxed_records):
            raise DataError("ground-state mode needs energy_per_atom on every "
                            "generated and relaxed record")
        report = evaluate_ground_state(
            gen_structs, [r.structure for r in relaxed_records],
            [r.energy_per_atom for r in gen_records],
            [r.energy_per_atom for r in relaxed_records], criteria)
    _emit_report(report, out_path)


@cli.command(name="schedule-dump")
@click.option("--T", "t_steps", type=click.IntRange(min=1), default=1000,
              help="Number of diffusion steps.")
@click.option("--gamma-min", type=float, default=-10.0)
@click.option("--gamma-max", type=float, default=10.0)
def schedule_dump(t_steps, gamma_min, gamma_max):
    """Print the noise schedule as CSV rows (t, alpha, alpha_bar, sigma,
    sigma_prime)."""
    sched = make_sigmoid_schedule(t_steps, gamma_min, gamma_max)
    click.echo("t,alpha,alpha_bar,sigma,sigma_prime")
    for t in range(1, t_steps + 1):
        click.echo(",".join([str(t), repr(sched.alpha_at(t)),
                             repr(sched.alpha_bar_at(t)), repr(sched.sigma_at(t)),
                             repr(sched.sigma_prime_at(t))]))


def main(argv=None) -> int:
    """Run the CLI; returns the exit code instead of raising SystemExit."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except DivergenceError as exc:
        click.echo(f"numerical divergence: {exc}", err=True)
        return 3
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    return 0


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
