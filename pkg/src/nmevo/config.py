"""Run configuration: INI files, presets, environment overrides, hashing.

Every numeric constant the simulation uses is visible in the config file.
Most are freely settable; a few are architectural in this build (hidden
column width, the action-SD clamp) and the loader rejects changes to them
rather than silently ignoring the request. Unknown sections or keys are
errors, not warnings.

The config hash is a digest of the canonical rendering of the effective
configuration; it is stamped into every output table and checkpoint, and
resuming a run requires it to match.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, replace

from . import genome, network
from .evolution import EvolutionConfig
from .guided import GuidedSettings
from .lifetime import MODES

ENV_PREFIX = "NMEVO_"

_BOOL_STATES = {
    "1": True, "true": True, "yes": True, "on": True,
    "0": False, "false": False, "no": False, "off": False,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    baseline_trials: int = 5000
    baseline_instances: int = 10
    trajectory_instances: int = 8
    curve_window: int = 100
    n_hidden: int = 8
    sd_clamp_lo: float = -10.0
    sd_clamp_hi: float = 4.0


def preset(name: str) -> RunConfig:
    if name == "paper-full":
        return RunConfig()
    if name == "desk-scale":
        return RunConfig(
            evolution=EvolutionConfig(
                population_size=30,
                generations=300,
                parent_pool=8,
                elite_pool=2,
                n_instances=16,
                n_trials=30,
                guided=GuidedSettings(n_train=12),
            )
        )
    raise ConfigError(f"unknown preset {name!r} (expected paper-full or desk-scale)")


def _bool(text: str) -> bool:
    try:
        return _BOOL_STATES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


# (section, key) -> (dotted attribute path, caster)
_SCHEMA: dict[tuple[str, str], tuple[str, type]] = {
    ("run", "master_seed"): ("evolution.master_seed", int),
    ("run", "mode"): ("evolution.mode", str),
    ("evolution", "population_size"): ("evolution.population_size", int),
    ("evolution", "generations"): ("evolution.generations", int),
    ("evolution", "parent_pool"): ("evolution.parent_pool", int),
    ("evolution", "elite_pool"): ("evolution.elite_pool", int),
    ("evolution", "n_instances"): ("evolution.n_instances", int),
    ("evolution", "n_trials"): ("evolution.n_trials", int),
    ("evolution", "checkpoint_every"): ("evolution.checkpoint_every", int),
    ("task", "t_trial"): ("evolution.t_trial", int),
    ("substrate", "n_hidden"): ("n_hidden", int),
    ("substrate", "sd_clamp_lo"): ("sd_clamp_lo", float),
    ("substrate", "sd_clamp_hi"): ("sd_clamp_hi", float),
    ("rl", "gamma"): ("evolution.a2c.gamma", float),
    ("rl", "learning_rate"): ("evolution.a2c.learning_rate", float),
    ("rl", "value_coef"): ("evolution.a2c.value_coef", float),
    ("rl", "entropy_coef"): ("evolution.a2c.entropy_coef", float),
    ("rl", "max_grad_norm"): ("evolution.a2c.max_grad_norm", float),
    ("rl", "rms_alpha"): ("evolution.a2c.rms_alpha", float),
    ("rl", "rms_epsilon"): ("evolution.a2c.rms_epsilon", float),
    ("rl", "update_interval"): ("evolution.a2c.update_interval", int),
    ("mutation", "p_insert_activatory"): ("evolution.p_insert_activatory", float),
    ("mutation", "p_delete_activatory"): ("evolution.p_delete_activatory", float),
    ("mutation", "p_insert_modulatory"): ("evolution.p_insert_modulatory", float),
    ("mutation", "p_delete_modulatory"): ("evolution.p_delete_modulatory", float),
    ("mutation", "p_weight_mutation"): ("evolution.p_weight_mutation", float),
    ("mutation", "p_guided_weight"): ("evolution.p_guided_weight", float),
    ("mutation", "p_rl_rate_mutation"): ("evolution.p_rl_rate_mutation", float),
    ("mutation", "global_rate_noise"): ("evolution.global_rate_noise", float),
    ("mutation", "local_rate_noise"): ("evolution.local_rate_noise", float),
    ("mutation", "p_priority_mutation"): ("evolution.p_priority_mutation", float),
    ("mutation", "priority_noise"): ("evolution.priority_noise", float),
    ("mutation", "structural_retries"): ("evolution.structural_retries", int),
    ("guided", "tau"): ("evolution.guided.tau", float),
    ("guided", "n_train"): ("evolution.guided.n_train", int),
    ("guided", "stall_patience"): ("evolution.guided.stall_patience", int),
    ("guided", "max_epochs"): ("evolution.guided.max_epochs", int),
    ("guided", "initial_step"): ("evolution.guided.initial_step", float),
    ("guided", "tau_outside"): ("evolution.guided.tau_outside", _bool),
    ("baseline", "trials"): ("baseline_trials", int),
    ("baseline", "instances"): ("baseline_instances", int),
    ("analysis", "trajectory_instances"): ("trajectory_instances", int),
    ("analysis", "curve_window"): ("curve_window", int),
}

_PATH_TO_SECTION_KEY = {path: sk for sk, (path, _) in _SCHEMA.items()}


def _get(config: RunConfig, path: str):
    obj = config
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _build(base: RunConfig, values: dict[str, object]) -> RunConfig:
    evo_kwargs, a2c_kwargs, guided_kwargs, top_kwargs = {}, {}, {}, {}
    for path, value in values.items():
        parts = path.split(".")
        if parts[0] == "evolution":
            if parts[1] == "a2c":
                a2c_kwargs[parts[2]] = value
            elif parts[1] == "guided":
                guided_kwargs[parts[2]] = value
            else:
                evo_kwargs[parts[1]] = value
        else:
            top_kwargs[parts[0]] = value
    evo = base.evolution
    if a2c_kwargs:
        evo_kwargs["a2c"] = replace(evo.a2c, **a2c_kwargs)
    if guided_kwargs:
        evo_kwargs["guided"] = replace(evo.guided, **guided_kwargs)
    try:
        if evo_kwargs:
            evo = replace(evo, **evo_kwargs)
        return replace(base, evolution=evo, **top_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_ini(text: str) -> dict[str, object]:
    """Schema-checked parse of INI text into attribute-path values."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict[str, object] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            try:
                path, caster = _SCHEMA[(section.lower(), key.lower())]
            except KeyError:
                raise ConfigError(f"unknown config key [{section}] {key}") from None
            try:
                values[path] = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc
    return values


def env_overrides(environ=None) -> dict[str, object]:
    """NMEVO_<SECTION>_<KEY> variables; section names contain no underscore,
    so the first underscore after the prefix splits section from key."""
    environ = os.environ if environ is None else environ
    values: dict[str, object] = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        if "_" not in rest:
            continue  # flag-level overrides (seed, mode, ...) handled by the CLI
        section, key = rest.split("_", 1)
        if (section, key) not in _SCHEMA:
            if section in {s for s, _ in _SCHEMA}:
                raise ConfigError(f"unknown config key in environment: {name}")
            continue
        path, caster = _SCHEMA[(section, key)]
        try:
            values[path] = caster(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {name}: {exc}") from exc
    return values


def validate(config: RunConfig) -> RunConfig:
    evo = config.evolution
    if evo.mode not in MODES:
        raise ConfigError(f"[run] mode must be one of {MODES}, got {evo.mode!r}")
    if config.n_hidden != genome.N_HIDDEN:
        raise ConfigError(
            f"[substrate] n_hidden is fixed at {genome.N_HIDDEN} in this build"
        )
    if config.sd_clamp_lo != network.SD_CLAMP_LO or config.sd_clamp_hi != network.SD_CLAMP_HI:
        raise ConfigError(
            "[substrate] sd_clamp bounds are fixed at "
            f"[{network.SD_CLAMP_LO}, {network.SD_CLAMP_HI}] in this build"
        )
    for path in (
        "evolution.population_size",
        "evolution.generations",
        "evolution.parent_pool",
        "evolution.n_instances",
        "evolution.n_trials",
        "evolution.t_trial",
        "evolution.checkpoint_every",
        "evolution.guided.n_train",
        "evolution.guided.max_epochs",
        "evolution.guided.stall_patience",
        "baseline_trials",
        "baseline_instances",
        "trajectory_instances",
        "curve_window",
    ):
        if _get(config, path) < 1:
            section, key = _PATH_TO_SECTION_KEY[path]
            raise ConfigError(f"[{section}] {key} must be >= 1")
    for path in (
        "evolution.p_insert_activatory",
        "evolution.p_delete_activatory",
        "evolution.p_insert_modulatory",
        "evolution.p_delete_modulatory",
        "evolution.p_weight_mutation",
        "evolution.p_guided_weight",
        "evolution.p_rl_rate_mutation",
        "evolution.p_priority_mutation",
    ):
        if not 0.0 <= _get(config, path) <= 1.0:
            section, key = _PATH_TO_SECTION_KEY[path]
            raise ConfigError(f"[{section}] {key} must be in [0, 1]")
    if not 0.0 <= evo.a2c.gamma <= 1.0:
        raise ConfigError("[rl] gamma must be in [0, 1]")
    for path in (
        "evolution.a2c.learning_rate",
        "evolution.a2c.value_coef",
        "evolution.a2c.entropy_coef",
        "evolution.a2c.max_grad_norm",
        "evolution.a2c.rms_epsilon",
        "evolution.global_rate_noise",
        "evolution.local_rate_noise",
        "evolution.priority_noise",
        "evolution.guided.tau",
        "evolution.guided.initial_step",
    ):
        if _get(config, path) < 0.0:
            section, key = _PATH_TO_SECTION_KEY[path]
            raise ConfigError(f"[{section}] {key} must be >= 0")
    return config


def load(
    path: str | None = None,
    preset_name: str = "paper-full",
    environ=None,
) -> RunConfig:
    """Preset defaults, overridden by the config file, overridden by
    NMEVO_* environment variables; validated."""
    base = preset(preset_name)
    values: dict[str, object] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_ini(text))
    values.update(env_overrides(environ))
    return validate(_build(base, values))


def apply(config: RunConfig, values: dict[str, object]) -> RunConfig:
    """Attribute-path overrides (e.g. {"evolution.mode": "rl_only"}),
    re-validated."""
    return validate(_build(config, values))


def to_ini(config: RunConfig) -> str:
    """Canonical rendering: every schema key, sections and keys sorted."""
    sections: dict[str, list[str]] = {}
    for (section, key), (path, _) in sorted(_SCHEMA.items()):
        value = _get(config, path)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        sections.setdefault(section, []).append(f"{key} = {text}")
    chunks = []
    for section in sorted(sections):
        chunks.append(f"[{section}]")
        chunks.extend(sections[section])
        chunks.append("")
    return "\n".join(chunks)


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(to_ini(config).encode("utf-8")).hexdigest()[:16]
