"""Experiment files and run directories.

An experiment file is a JSON document naming a system, target and reward, plus sections for
training, episodes, evaluation and the Lyapunov baseline. Loading materializes every default, so
the snapshot written into a run directory fully specifies the run.

Run directory layout:
    config.json        resolved experiment
    VERSION            package version that made the run
    checkpoint.zst     trained agent
    train_log.jsonl    one line per training iteration
    reports/           evaluation reports

"""

import datetime
import json
import logging
import os
import re
import typing as ty

import pandas as pd

import qstab

export, __all__ = qstab.exporter()

log = logging.getLogger("qstab.experiment")

CONTROLLERS = ("policy", "lyapunov", "zero")
__all__.append("CONTROLLERS")


@export
class ExperimentConfig(qstab.ConfigSection):
    name = qstab.Config(type=str, default="experiment", help="Prefix of the run directory")
    system = qstab.Config(
        type=(str, dict), default="bell2q", help="Catalog system name or an inline system"
    )
    target = qstab.Config(
        type=(str, dict, list),
        default=None,
        help="Target state name or matrix; None uses the catalog target",
    )
    reward = qstab.Config(
        type=dict, default_factory=lambda: dict(variant="PNR"), help="Reward variant and overrides"
    )
    train = qstab.Config(type=dict, default_factory=dict, help="TrainConfig options")
    episode = qstab.Config(type=dict, default_factory=dict, help="EpisodeConfig options")
    eval = qstab.Config(type=dict, default_factory=dict, help="EvalProtocol options")
    lyapunov = qstab.Config(type=dict, default_factory=dict, help="LyapunovConfig options")
    imperfections = qstab.Config(
        type=dict,
        default_factory=lambda: dict(eta_c=None, delay_steps=0),
        help="Measurement efficiency eta_c and observation delay_steps, for training and eval",
    )
    controller = qstab.Config(
        type=str, default="policy", choices=CONTROLLERS, help="Controller to evaluate"
    )
    ablation_variants = qstab.Config(
        type=tuple, default=qstab.VARIANTS, help="Reward variants trained by the ablate command"
    )
    output_dir = qstab.Config(type=str, default="runs", help="Where run directories are created")
    seed = qstab.Config(type=int, default=0, help="Root seed, used where a section sets none")

    def check(self):
        unknown = set(self.imperfections) - {"eta_c", "delay_steps"}
        if unknown:
            raise qstab.InvalidConfiguration(f"Unknown option(s) {', '.join(sorted(unknown))}")
        for variant in self.ablation_variants:
            if variant not in qstab.VARIANTS:
                raise qstab.InvalidConfiguration(f"Unknown option value {variant!r}")
        # Build everything once, so errors surface before any run starts
        try:
            self.catalog_entry()
            self.reward_spec()
            self.train_config()
            self.episode_config()
            self.eval_protocol()
            self.lyapunov_config()
        except ValueError as e:
            raise qstab.InvalidConfiguration(str(e)) from e

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        """Read an experiment file, errors are reported as path:line: message."""
        with open(path) as f:
            text = f.read()
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise qstab.InvalidConfiguration(f"{path}:{e.lineno}: {e.msg}") from e
        if not isinstance(document, dict):
            raise qstab.InvalidConfiguration(f"{path}:1: expected a JSON object")
        document.update(overrides)
        try:
            return cls(document)
        except qstab.InvalidConfiguration as e:
            raise qstab.InvalidConfiguration(f"{path}:{_locate(text, str(e))}: {e}") from e

    @property
    def imperfect_system_changes(self) -> dict:
        eta_c = self.imperfections.get("eta_c")
        return {} if eta_c is None else dict(eta_c=float(eta_c))

    def catalog_entry(self) -> "qstab.SystemCatalogEntry":
        changes = self.imperfect_system_changes
        if isinstance(self.system, str):
            entry = qstab.get_system(self.system, **changes)
        else:
            system = qstab.SystemSpec.from_dict(self.system)
            if changes:
                system = system.replace(**changes)
            if self.target is None:
                raise qstab.InvalidConfiguration("An inline system needs an explicit target")
            entry = qstab.SystemCatalogEntry(
                name=system.name,
                description="inline system",
                system=system,
                target=qstab.resolve_state(self.target, system.dim),
                max_time=20.0,
            )
        if self.target is not None:
            entry = entry._replace(target=qstab.resolve_state(self.target, entry.system.dim))
        qstab.check_pure_target(entry.target)
        return entry

    def reward_spec(self, variant=None) -> "qstab.RewardSpec":
        """The configured reward, or the default reward of variant with the configured d."""
        if variant is None:
            return qstab.RewardSpec.from_dict(self.reward)
        spec = qstab.default_specs()[variant]
        if "d" in self.reward:
            spec = spec.replace(d=self.reward["d"])
        return spec

    def train_config(self, budget_scale=1.0) -> "qstab.TrainConfig":
        options = dict(seed=self.seed)
        options.update(self.train)
        config = qstab.TrainConfig(options)
        if budget_scale != 1.0:
            if not budget_scale > 0:
                raise qstab.InvalidConfiguration(f"Budget scale must be > 0, not {budget_scale}")
            total_steps = max(1, int(round(config.total_steps * budget_scale)))
            config = config.replace(total_steps=total_steps)
        return config

    def episode_config(self) -> "qstab.EpisodeConfig":
        entry = self.catalog_entry()
        options = dict(
            max_time=entry.max_time,
            dt=entry.system.dt,
            delay_steps=int(self.imperfections.get("delay_steps", 0)),
        )
        options.update(self.episode)
        return qstab.EpisodeConfig(options)

    def eval_protocol(self, **changes) -> "qstab.EvalProtocol":
        options = dict(
            seed=self.seed,
            eta_c=self.imperfections.get("eta_c"),
            delay_steps=int(self.imperfections.get("delay_steps", 0)),
        )
        options.update(self.eval)
        options.update({k: v for k, v in changes.items() if v is not None})
        return qstab.EvalProtocol(options)

    def lyapunov_config(self) -> "qstab.LyapunovConfig":
        return qstab.LyapunovConfig(self.lyapunov)

    def env_factory(self) -> ty.Callable:
        """env_factory(reward_spec, index) for the trainer."""
        entry = self.catalog_entry()
        episode_config = self.episode_config()

        def make_env(reward_spec, index):
            return qstab.QuantumFeedbackEnv(
                entry.system, entry.target, reward_spec, episode_config
            )

        return make_env

    def resolved(self) -> dict:
        """Snapshot with every default of every section materialized."""
        snapshot = self.to_dict()
        snapshot["reward"] = self.reward_spec().to_dict()
        snapshot["train"] = self.train_config().to_dict()
        snapshot["episode"] = self.episode_config().to_dict()
        # Tags come from the imperfections section, not from the eval section
        eval_protocol = self.eval_protocol().to_dict()
        for key in ("eta_c", "delay_steps"):
            if key not in self.eval:
                eval_protocol.pop(key)
        snapshot["eval"] = eval_protocol
        snapshot["lyapunov"] = self.lyapunov_config().to_dict()
        snapshot["imperfections"] = dict(
            eta_c=self.imperfections.get("eta_c"),
            delay_steps=int(self.imperfections.get("delay_steps", 0)),
        )
        return snapshot

    def save(self, path):
        with open(path, mode="w") as f:
            json.dump(self.resolved(), f, cls=qstab.NumpyJSONEncoder, indent=2)


def _locate(text: str, message: str) -> int:
    """Line of the first "key": in text for a word of message, in message order; else 1."""
    lines = text.splitlines()
    for word in re.findall(r"[A-Za-z_]\w*", message):
        pattern = re.compile(r'"' + word + r'"\s*:')
        for i, line in enumerate(lines):
            if pattern.search(line):
                return i + 1
    return 1


@export
def create_run_dir(output_dir, name="experiment", config: ty.Optional[dict] = None) -> str:
    """Make output_dir/<name>_<timestamp>_<config hash> with a VERSION file; return its path."""
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    suffix = qstab.deterministic_hash(config, length=6) if config is not None else "run"
    path = os.path.join(output_dir, f"{name}_{stamp}_{suffix}")
    i = 1
    while os.path.exists(path):
        path = os.path.join(output_dir, f"{name}_{stamp}_{suffix}-{i}")
        i += 1
    os.makedirs(os.path.join(path, "reports"))
    with open(os.path.join(path, "VERSION"), mode="w") as f:
        f.write(qstab.__version__ + "\n")
    return path


@export
class RunResult(ty.NamedTuple):
    run_dir: str
    checkpoint: str
    training_log: pd.DataFrame


@export
def run_training(
    config: ExperimentConfig,
    budget_scale=1.0,
    run_dir=None,
    reward_spec=None,
    progress_bar=True,
    tag="",
) -> RunResult:
    """Train an agent for the experiment, write snapshot, log and checkpoint to a run directory."""
    if run_dir is None:
        run_dir = create_run_dir(config.output_dir, config.name, config.resolved())
        config.save(os.path.join(run_dir, "config.json"))
    reward_spec = reward_spec if reward_spec is not None else config.reward_spec()
    train_config = config.train_config(budget_scale)
    entry = config.catalog_entry()

    prefix = f"{tag}_" if tag else ""
    checkpoint = os.path.join(run_dir, f"{prefix}checkpoint.zst")
    log_path = os.path.join(run_dir, f"{prefix}train_log.jsonl")
    log.info(
        f"Training {reward_spec.variant} on {entry.name} for {train_config.total_steps} steps "
        f"into {run_dir}"
    )
    trainer = qstab.PPOTrainer(config.env_factory(), reward_spec, train_config)
    training_log = trainer.learn(
        progress_bar=progress_bar, log_path=log_path, checkpoint_path=checkpoint
    )
    trainer.save(
        checkpoint,
        experiment=config.resolved(),
        system=entry.system.to_dict(),
        target=qstab.matrix_to_json(entry.target),
        reward=reward_spec.to_dict(),
    )
    return RunResult(run_dir, checkpoint, training_log)


@export
def build_controller(
    kind: str,
    system: "qstab.SystemSpec",
    target,
    policy: ty.Optional["qstab.GaussianPolicy"] = None,
    lyapunov_config: ty.Optional["qstab.LyapunovConfig"] = None,
):
    if kind == "policy":
        if policy is None:
            raise qstab.InvalidConfiguration("The policy controller needs a checkpoint")
        return qstab.PolicyController(policy, system)
    if kind == "lyapunov":
        return qstab.LyapunovController(system, target, lyapunov_config)
    if kind == "zero":
        return qstab.ZeroController(system.n_controls)
    raise qstab.InvalidConfiguration(f"Unknown controller {kind!r}, choose from {CONTROLLERS}")


# Failures of a single ablation variant that should not stop the others
_VARIANT_FAILURES = (
    qstab.TrainingDiverged,
    qstab.TrajectoryDiverged,
    qstab.EigenNotConverged,
    FloatingPointError,
)


@export
def run_ablation(
    config: ExperimentConfig, budget_scale=1.0, progress_bar=True
) -> ty.Tuple[str, pd.DataFrame]:
    """Train one agent per reward variant with identical seeds and budget, evaluate each.

    Returns (run directory, table). Failed variants appear as rows with an error.

    """
    run_dir = create_run_dir(config.output_dir, f"{config.name}_ablation", config.resolved())
    config.save(os.path.join(run_dir, "config.json"))
    entry = config.catalog_entry()
    protocol = config.eval_protocol()
    results = []
    for variant in config.ablation_variants:
        spec = config.reward_spec(variant)
        try:
            run = run_training(
                config, budget_scale, run_dir, spec, progress_bar=progress_bar, tag=variant
            )
            policy, _, _ = qstab.load_agent(run.checkpoint)
            report = qstab.evaluate_controller(
                qstab.PolicyController(policy, entry.system),
                entry.system,
                entry.target,
                protocol,
                progress_bar=progress_bar,
            )
            report.metadata["reward"] = variant
            report.save(os.path.join(run_dir, "reports"), name=f"{variant}_{report.tag}")
            results.append((spec, report))
        except _VARIANT_FAILURES as e:
            log.error(f"Variant {variant} failed: {e}")
            results.append((spec, e))
    table = qstab.ablation_table(results)
    table.to_csv(os.path.join(run_dir, "ablation.csv"), index=False)
    return run_dir, table

