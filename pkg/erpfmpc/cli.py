"""
Command-line interface for the ERPF-MPC simulator.
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import click
import numpy as np

from erpfmpc import __version__
from erpfmpc.controllers import available_controllers, build_controller
from erpfmpc.exceptions import ConfigError, ValidationError
from erpfmpc.harness import (
    HarnessSettings,
    Simulation,
    compute_metrics,
    monte_carlo,
    run_scenario,
    scenario_planner_config,
    scenario_trajectories,
)
from erpfmpc.reports import (
    FieldGridSpec,
    dump_field,
    export_log,
    run_directory,
    write_benchmark,
    write_sweep_csv,
)
from erpfmpc.risk_ellipse import aspect_ratio_sweep
from erpfmpc.risk_field import Obstacle, distance
from erpfmpc.scenarios import PRESETS, Scenario, load_scenario, replay_scenario
from erpfmpc.utils.config import (
    RunConfig,
    apply_overrides,
    build_planner_config,
    effective_overrides,
    get_default_config,
    load_config,
    save_config,
)

logger = logging.getLogger(__name__)

DEFAULT_TTC_GRID = tuple(np.round(np.arange(0.5, 6.01, 0.5), 2))
DEFAULT_TWH_GRID = tuple(np.round(np.arange(0.1, 2.01, 0.1), 2))


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _resolve_run(config: Optional[str], sets: Tuple[str, ...], **flags: Any) -> RunConfig:
    """Config file (or defaults), then command-line flags, then ``--set`` options."""
    if config:
        base = load_config(config).to_dict()
    else:
        base = RunConfig().to_dict()
    for key, value in flags.items():
        if value is not None:
            base[key] = value
    return RunConfig.from_dict(apply_overrides(base, sets))


def _fail(message: str, error: Exception) -> None:
    click.echo(f"✗ {message}: {error}", err=True)
    sys.exit(1)


def _prepare(run: RunConfig, scenario: Scenario):
    overrides = effective_overrides(run, scenario.planner_overrides)
    planner = build_planner_config(overrides)
    settings = HarnessSettings.from_overrides(overrides)
    return planner, settings


def _simulate_and_export(run: RunConfig, scenario: Scenario, verbose: bool) -> None:
    planner, settings = _prepare(run, scenario)
    if verbose:
        click.echo(f"Running {scenario.name} with {run.controller} (seed {run.seed})...")
    log = run_scenario(scenario, run.controller, run.seed, planner, settings)
    metrics = compute_metrics(log, settings.collision_threshold, scenario) if log.n_steps else None
    out = run_directory(run.output_dir, scenario.name, run.controller, run.seed)
    generated = export_log(log, str(out), metrics=metrics, threshold=settings.collision_threshold)

    click.echo("\n" + "=" * 60)
    click.echo("RUN SUMMARY")
    click.echo("=" * 60)
    click.echo(f"Scenario:          {scenario.name}")
    click.echo(f"Controller:        {run.controller}")
    click.echo(f"Seed:              {run.seed}")
    click.echo(f"Ticks:             {log.n_steps}")
    if metrics is not None:
        status = "✓" if metrics.collision_count == 0 else "✗"
        click.echo(f"Collisions:        {metrics.collision_count} {status}")
        click.echo(f"Min distance:      {metrics.min_distance:.2f} m")
        click.echo(f"Avg speed:         {metrics.avg_speed:.2f} m/s")
        click.echo(f"Max |du|:          {metrics.max_du:.3f}")
        if metrics.lane_change_time is not None:
            click.echo(f"Lane change time:  {metrics.lane_change_time:.1f} s")
        click.echo(f"FLOPs per step:    {metrics.flops_per_step:.0f}")
    for t, obstacle_id in log.alerts:
        click.echo(f"⚠ EF alert at t={t:.1f} s: {obstacle_id}")

    click.echo("\n" + "=" * 60)
    click.echo("EXPORTS")
    click.echo("=" * 60)
    for name, path in generated.items():
        click.echo(f"{name.upper():12s}: {path}")

    if not log.valid:
        click.echo(f"\n✗ Run aborted: {log.failure}", err=True)
        sys.exit(1)


@click.group()
@click.version_option(version=__version__)
def main():
    """
    ERPF-MPC - receding-horizon planning with evolutionary risk potential
    fields, benchmarked in closed-loop driving scenarios.
    """
    pass


config_option = click.option("--config", "-c", type=click.Path(exists=True),
                             help="Path to configuration YAML file")
scenario_option = click.option("--scenario", "-s", help="Preset name or scenario YAML file")
seed_option = click.option("--seed", type=int, help="Seed of the HDV noise")
out_option = click.option("--out", "-o", "output_dir", type=click.Path(), help="Output root directory")
set_option = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                          help="Override a configuration value, e.g. risk_field.lam=4")
verbose_option = click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")


@main.command()
@config_option
@scenario_option
@click.option("--controller", type=click.Choice(available_controllers()), help="Controller to run")
@seed_option
@out_option
@set_option
@verbose_option
def simulate(config: Optional[str], scenario: Optional[str], controller: Optional[str],
             seed: Optional[int], output_dir: Optional[str], sets: tuple, verbose: bool):
    """
    Run one closed-loop simulation and export its logs.

    Examples:

        # Lane change with the evolutionary planner
        erpfmpc simulate --scenario scenario1

        # Static-field baseline with a different history length
        erpfmpc simulate --controller rpf_mpc --set risk_field.n_history=20
    """
    _configure_logging(verbose)
    try:
        run = _resolve_run(config, sets, scenario=scenario, controller=controller,
                           seed=seed, output_dir=output_dir)
        preset = load_scenario(run.scenario)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        _fail("Error loading configuration", e)
    _simulate_and_export(run, preset, verbose)


@main.command()
@config_option
@scenario_option
@click.option("--controller", "controllers", multiple=True, type=click.Choice(available_controllers()),
              help="Controller(s) to compare; all when omitted")
@seed_option
@click.option("--runs", type=int, help="Seeded runs per controller")
@click.option("--workers", type=int, help="Parallel worker processes")
@out_option
@set_option
@verbose_option
def bench(config: Optional[str], scenario: Optional[str], controllers: tuple, seed: Optional[int],
          runs: Optional[int], workers: Optional[int], output_dir: Optional[str], sets: tuple,
          verbose: bool):
    """
    Monte Carlo comparison of controllers on one scenario.

    Seeds run from --seed to --seed + --runs - 1.

    Example:
        erpfmpc bench --scenario scenario2 --runs 20 --workers 4
    """
    _configure_logging(verbose)
    try:
        run = _resolve_run(config, sets, scenario=scenario, seed=seed, runs=runs,
                           workers=workers, output_dir=output_dir)
        preset = load_scenario(run.scenario)
        planner, settings = _prepare(run, preset)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        _fail("Error loading configuration", e)

    names = list(controllers) or available_controllers()
    seeds = list(range(run.seed, run.seed + run.runs))
    summaries = monte_carlo(preset, names, run.runs, seeds, run.workers, planner, settings)
    generated = write_benchmark(preset.name, summaries, str(Path(run.output_dir) / preset.name / "bench"))

    click.echo("\n" + "=" * 60)
    click.echo(f"BENCHMARK {preset.name} ({run.runs} runs each)")
    click.echo("=" * 60)
    click.echo(f"{'Controller':12s} {'Valid':>6s} {'Coll. mean':>11s} {'Coll. max':>10s} {'Speed':>8s} {'Min d':>7s}")
    for name, summary in summaries.items():
        collisions = summary.stat("collision_count")
        click.echo(f"{name:12s} {summary.n_valid:6d} {collisions['mean']:11.2f} {collisions['max']:10.0f} "
                   f"{summary.stat('avg_speed')['mean']:8.2f} {summary.stat('min_distance')['min']:7.2f}")
        if summary.invalid_seeds:
            click.echo(f"  ⚠ invalid seeds: {summary.invalid_seeds}")
    click.echo("")
    for name, path in generated.items():
        click.echo(f"{name.upper():12s}: {path}")


@main.command()
@click.option("--v-rel", type=float, default=10.0, show_default=True, help="Closing speed (m/s)")
@click.option("--w-obs", type=float, default=2.0, show_default=True, help="Obstacle width (m)")
@click.option("--ttc", "ttcs", multiple=True, type=float, help="TTC grid values (s)")
@click.option("--twh", "twhs", multiple=True, type=float, help="TWH grid values (s)")
@config_option
@out_option
@set_option
@verbose_option
def sweep(v_rel: float, w_obs: float, ttcs: tuple, twhs: tuple, config: Optional[str],
          output_dir: Optional[str], sets: tuple, verbose: bool):
    """
    Tabulate risk-ellipse axes and aspect ratio over a TTC x TWH grid.
    """
    _configure_logging(verbose)
    try:
        run = _resolve_run(config, sets, output_dir=output_dir)
        params = build_planner_config(run.overrides).ellipse
        frame = aspect_ratio_sweep(ttcs or DEFAULT_TTC_GRID, twhs or DEFAULT_TWH_GRID, v_rel, w_obs, params)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        _fail("Error running sweep", e)

    path = write_sweep_csv(frame, str(Path(run.output_dir) / "sweep" / "aspect_ratio.csv"))
    peak = frame.loc[frame["aspect_ratio"].idxmax()]
    click.echo(f"✓ {len(frame)} cells written to {path}")
    click.echo(f"  max a/b = {peak['aspect_ratio']:.2f} at TTC={peak['ttc']:g} s, TWH={peak['twh']:g} s")


@main.command()
@config_option
@scenario_option
@click.option("--tick", type=int, default=0, show_default=True, help="Tick at which to evaluate the field")
@click.option("--resolution", type=float, default=0.5, show_default=True, help="Grid resolution (m)")
@click.option("--ahead", type=float, default=80.0, show_default=True, help="Grid extent ahead of the ego (m)")
@click.option("--behind", type=float, default=20.0, show_default=True, help="Grid extent behind the ego (m)")
@seed_option
@out_option
@set_option
@verbose_option
def field(config: Optional[str], scenario: Optional[str], tick: int, resolution: float, ahead: float,
          behind: float, seed: Optional[int], output_dir: Optional[str], sets: tuple, verbose: bool):
    """
    Dump ERPF and RPF values over a grid at one tick of an ERPF-MPC run.
    """
    _configure_logging(verbose)
    try:
        run = _resolve_run(config, sets, scenario=scenario, seed=seed, output_dir=output_dir)
        preset = load_scenario(run.scenario)
        planner, settings = _prepare(run, preset)
        if not 0 <= tick <= preset.n_steps:
            raise ValidationError("tick", f"must lie in [0, {preset.n_steps}]")
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        _fail("Error loading configuration", e)

    controller = build_controller("erpf_mpc", scenario_planner_config(preset, planner))
    state = preset.ego
    if tick > 0:
        history_run = replace(preset, duration=tick * preset.dt, tracks=_cut_tracks(preset, tick))
        log = Simulation(history_run, controller, run.seed, settings).run()
        state = log.final_state
    positions, velocities = scenario_trajectories(preset, run.seed)
    obstacles = [Obstacle(o.id, tuple(positions[tick, i]), tuple(velocities[tick, i]), o.width)
                 for i, o in enumerate(preset.obstacles)]
    histories = controller.histories
    for obstacle in obstacles:
        if obstacle.id in histories:
            histories[obstacle.id].push(distance(state, obstacle.p0))

    lo, hi = preset.lanes.band
    spec = FieldGridSpec(state.x - behind, state.x + ahead, lo, hi, resolution)
    out = Path(run.output_dir) / preset.name / "field" / f"tick_{tick}.csv"
    path = dump_field(state, obstacles, histories, spec, planner.risk, str(out))
    click.echo(f"✓ Field grid at t={tick * preset.dt:.1f} s written to {path}")


def _cut_tracks(scenario: Scenario, tick: int) -> Optional[Dict[str, np.ndarray]]:
    if scenario.tracks is None:
        return None
    return {key: track[:tick + 1] for key, track in scenario.tracks.items()}


@main.command()
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True),
              help="Recorded trajectories with columns t, vehicle_id, x, y")
@config_option
@scenario_option
@click.option("--controller", type=click.Choice(available_controllers()), help="Controller to run")
@out_option
@set_option
@verbose_option
def replay(csv_path: str, config: Optional[str], scenario: Optional[str], controller: Optional[str],
           output_dir: Optional[str], sets: tuple, verbose: bool):
    """
    Run a controller against recorded HDV trajectories.

    The ego, lanes and reference come from the base scenario.

    Example:
        erpfmpc replay --csv data/samples/replay_tracks.csv --scenario highway
    """
    _configure_logging(verbose)
    try:
        run = _resolve_run(config, sets, scenario=scenario, controller=controller, output_dir=output_dir)
        preset = replay_scenario(load_scenario(run.scenario), csv_path)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        _fail("Error loading replay", e)
    _simulate_and_export(run, preset, verbose)


@main.command()
@click.option(
    "--output",
    "-o",
    type=click.Path(),
    default="config.yaml",
    help="Output path for configuration file"
)
def init_config(output: str):
    """
    Generate a default configuration file.

    Example:
        erpfmpc init-config -o my-config.yaml
    """
    try:
        save_config(get_default_config(), output)
        click.echo(f"✓ Configuration file created: {output}")
    except OSError as e:
        _fail("Error creating configuration file", e)


@main.command()
def list_scenarios():
    """
    List the scenario presets.
    """
    click.echo("\nAvailable Scenarios:")
    click.echo("=" * 60)
    for name, factory in PRESETS.items():
        click.echo(f"{name:14s} - {factory().description}")
    click.echo()


if __name__ == "__main__":
    main()
