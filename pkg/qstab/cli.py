"""Command line interface: qstab train | eval | ablate | inspect-checkpoint | dump-system.

Exit codes: 0 success, 1 configuration error, 2 divergence, 3 incompatible checkpoint.

"""

import functools
import json
import logging
import os

import click

import qstab

EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_CHECKPOINT = 3

_EXIT_CODES = (
    (qstab.InvalidConfiguration, EXIT_CONFIG),
    (qstab.TrainingDiverged, EXIT_DIVERGED),
    (qstab.TrajectoryDiverged, EXIT_DIVERGED),
    (qstab.EigenNotConverged, EXIT_DIVERGED),
    (qstab.IncompatibleCheckpoint, EXIT_CHECKPOINT),
    (qstab.DataCorrupted, EXIT_CHECKPOINT),
)


class CommandFailed(click.ClickException):
    def __init__(self, message, exit_code):
        super().__init__(message)
        self.exit_code = exit_code


def handle_errors(f):
    """Turn qstab exceptions into messages and exit codes."""

    @functools.wraps(f)
    def wrapped(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except FileNotFoundError as e:
            raise CommandFailed(str(e), EXIT_CONFIG)
        except Exception as e:
            for exception_class, code in _EXIT_CODES:
                if isinstance(e, exception_class):
                    raise CommandFailed(f"{type(e).__name__}: {e}", code)
            raise

    return wrapped


def _echo_json(document):
    click.echo(json.dumps(document, cls=qstab.NumpyJSONEncoder, indent=2))


def _with_seed(config: "qstab.ExperimentConfig", seed):
    if seed is None:
        return config
    return config.replace(
        seed=seed, train={**config.train, "seed": seed}, eval={**config.eval, "seed": seed}
    )


@click.group()
@click.version_option(qstab.__version__, prog_name="qstab")
@click.option(
    "--log-level",
    default="WARNING",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging verbosity",
)
def main(log_level):
    """Measurement-feedback stabilization of quantum states with reinforcement learning."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s | %(name)s | %(levelname)s | %(message)s",
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment file")
@click.option("--seed", type=int, default=None, help="Override the root seed")
@click.option("--budget-scale", type=float, default=1.0, help="Scale total_steps by this factor")
@click.option("--output", type=click.Path(), default=None, help="Override the output directory")
@click.option("--no-progress", is_flag=True, help="Hide progress bars")
@handle_errors
def train(config_path, seed, budget_scale, output, no_progress):
    """Train a PPO agent; writes a run directory with checkpoint and logs."""
    config = _with_seed(qstab.ExperimentConfig.load(config_path), seed)
    if output is not None:
        config = config.replace(output_dir=output)
    result = qstab.run_training(config, budget_scale, progress_bar=not no_progress)
    last = result.training_log.iloc[-1].to_dict() if len(result.training_log) else {}
    _echo_json(dict(run_dir=result.run_dir, checkpoint=result.checkpoint, last_iteration=last))


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(), default=None, help="Trained agent")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Experiment file")
@click.option("--system", default=None, help="Catalog system, overrides config and checkpoint")
@click.option(
    "--controller",
    type=click.Choice(qstab.CONTROLLERS),
    default=None,
    help="Controller to evaluate (default: policy if a checkpoint is given, else the config's)",
)
@click.option("--init", "initial_state_mode", default=None, help="Initial state mode")
@click.option("--eta", type=float, default=None, help="Measurement efficiency eta_c")
@click.option("--delay", type=int, default=None, help="Observation delay in steps")
@click.option("--n-initial", type=int, default=None, help="Number of initial states")
@click.option("--n-noise", type=int, default=None, help="Noise realizations per initial state")
@click.option("--t-max", type=float, default=None, help="Time limit per trajectory [a.u.]")
@click.option("--gain", type=float, default=None, help="Lyapunov gain")
@click.option("--seed", type=int, default=None, help="Evaluation root seed")
@click.option("--workers", type=int, default=None, help="Threads running initial states")
@click.option("--output", type=click.Path(), default=None, help="Report directory")
@click.option("--full-resolution", is_flag=True, help="Keep every point of the distance curves")
@click.option("--no-progress", is_flag=True, help="Hide progress bars")
@handle_errors
def evaluate(
    checkpoint,
    config_path,
    system,
    controller,
    initial_state_mode,
    eta,
    delay,
    n_initial,
    n_noise,
    t_max,
    gain,
    seed,
    workers,
    output,
    full_resolution,
    no_progress,
):
    """Evaluate a controller on a grid of initial states and noise realizations."""
    policy = document = None
    if checkpoint is not None:
        policy, _, document = qstab.load_agent(checkpoint)

    if config_path is not None:
        config = qstab.ExperimentConfig.load(config_path)
    elif document is not None and document.get("experiment"):
        config = qstab.ExperimentConfig(document["experiment"])
    else:
        config = qstab.ExperimentConfig()
    if system is not None:
        config = config.replace(system=system, target=None)
    if eta is not None or delay is not None:
        imperfections = dict(config.imperfections)
        if eta is not None:
            imperfections["eta_c"] = eta
        if delay is not None:
            imperfections["delay_steps"] = delay
        config = config.replace(imperfections=imperfections)
    if gain is not None:
        config = config.replace(lyapunov={**config.lyapunov, "gain": gain})

    protocol = config.eval_protocol(
        initial_state_mode=initial_state_mode,
        n_initial_states=n_initial,
        n_noise_realizations=n_noise,
        t_max=t_max,
        seed=seed,
        max_workers=workers,
        full_resolution=True if full_resolution else None,
    )
    entry = config.catalog_entry()
    kind = controller or ("policy" if policy is not None else config.controller)
    try:
        ctrl = qstab.build_controller(
            kind, entry.system, entry.target, policy, config.lyapunov_config()
        )
    except qstab.DimensionMismatch as e:
        raise qstab.IncompatibleCheckpoint(f"{checkpoint} does not fit {entry.name}: {e}")

    report = qstab.evaluate_controller(
        ctrl, entry.system, entry.target, protocol, progress_bar=not no_progress
    )
    if output is None:
        output = (
            os.path.join(os.path.dirname(os.path.abspath(checkpoint)), "reports")
            if checkpoint is not None
            else "reports"
        )
    paths = report.save(output)
    summary = report.summary()
    summary.pop("protocol")
    _echo_json(dict(summary, files=paths))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment file")
@click.option("--seed", type=int, default=None, help="Override the root seed")
@click.option("--budget-scale", type=float, default=1.0, help="Scale total_steps by this factor")
@click.option("--output", type=click.Path(), default=None, help="Override the output directory")
@click.option("--no-progress", is_flag=True, help="Hide progress bars")
@handle_errors
def ablate(config_path, seed, budget_scale, output, no_progress):
    """Train and evaluate one agent per reward variant, write an ablation table."""
    config = _with_seed(qstab.ExperimentConfig.load(config_path), seed)
    if output is not None:
        config = config.replace(output_dir=output)
    run_dir, table = qstab.run_ablation(config, budget_scale, progress_bar=not no_progress)
    click.echo(table.to_string(index=False))
    click.echo(f"\nWritten to {os.path.join(run_dir, 'ablation.csv')}")


@main.command(name="inspect-checkpoint")
@click.argument("path", type=click.Path())
@handle_errors
def inspect_checkpoint(path):
    """Print what a checkpoint holds."""
    policy, value_net, document = qstab.load_agent(path)
    _echo_json(
        dict(
            format_version=document.get("format_version"),
            qstab_version=document.get("qstab_version"),
            observation_size=policy.observation_size,
            action_size=policy.action_size,
            layer_sizes=policy.mean_net.sizes,
            log_std=policy.log_std,
            has_value_net=value_net is not None,
            timesteps=document.get("timesteps"),
            iteration=document.get("iteration"),
            diagnostic=document.get("diagnostic", False),
            system=(document.get("system") or {}).get("name"),
            reward=document.get("reward"),
            train=document.get("config"),
        )
    )


@main.command(name="dump-system")
@click.argument("name")
@click.option("--eta", type=float, default=None, help="Measurement efficiency eta_c")
@handle_errors
def dump_system(name, eta):
    """Print a catalog system with its target as JSON."""
    changes = {} if eta is None else dict(eta_c=eta)
    entry = qstab.get_system(name, **changes)
    _echo_json(
        dict(
            name=entry.name,
            description=entry.description,
            max_time=entry.max_time,
            initial_states=entry.initial_states,
            system=entry.system.to_dict(),
            target=qstab.matrix_to_json(entry.target),
        )
    )
