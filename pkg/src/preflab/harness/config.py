"""Experiment configuration: nested dataclasses with YAML round-trip.

Every knob lives under a section whose dotted name matches its YAML key
(``env.name``, ``ssl.tau``, ``reward.lr``, ...).  ``default_config()``
gives the full default set; ``--print-config`` on the CLI dumps it.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

import yaml

from ..agent import AgentConfig
from ..annotators import AnnotatorConfig
from ..errors import ConfigurationError
from ..sampler import SCHEMES
from ..semisup import AugmentConfig, SSLConfig

ANNOTATOR_MODES = ("oracle", "noisy", "human")


@dataclass
class EnvSettings:
    name: str = "grid-hazard"
    seed: int = 0
    random_start: bool = False  # exploring starts during training rollouts


@dataclass
class AnnotatorSettings:
    mode: str = "oracle"
    beta: float = math.inf
    gamma: float = 1.0
    epsilon: float = 0.0
    delta_skip: float = -math.inf
    delta_equal: float = 0.0

    def to_annotator_config(self) -> AnnotatorConfig:
        return AnnotatorConfig(beta=self.beta, gamma_myopic=self.gamma,
                               epsilon_mistake=self.epsilon,
                               delta_skip=self.delta_skip, delta_equal=self.delta_equal)


@dataclass
class RewardSettings:
    layers: int = 2
    hidden: int = 64
    lr: float = 0.003
    ensemble: int = 3

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return (self.hidden,) * self.layers


@dataclass
class SamplerSettings:
    scheme: str = "disagreement"
    candidates_per_query: int = 10


@dataclass
class ScheduleSettings:
    total_budget: int = 100
    queries_per_session: int = 10
    feedback_frequency: int = 1000   # env steps of policy learning per session
    total_steps: int = 12000         # env steps overall (post-warmup)
    warmup_steps: int = 2000
    buffer_capacity: int = 20000
    eval_pairs: int = 100
    eval_episodes: int = 10
    count_skips_against_budget: bool = False
    human_timeout_s: float = 3600.0


@dataclass
class ExperimentConfig:
    env: EnvSettings = field(default_factory=EnvSettings)
    annotator: AnnotatorSettings = field(default_factory=AnnotatorSettings)
    reward: RewardSettings = field(default_factory=RewardSettings)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    agent: AgentConfig = field(default_factory=AgentConfig)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    segment_length: int = 50
    seed: int = 0

    def validate(self) -> None:
        from ..envs import ENV_NAMES
        s = self.schedule
        if self.env.name not in ENV_NAMES:
            raise ConfigurationError(f"env.name must be one of {ENV_NAMES}")
        if self.annotator.mode not in ANNOTATOR_MODES:
            raise ConfigurationError(f"annotator.mode must be one of {ANNOTATOR_MODES}")
        if self.sampler.scheme not in SCHEMES:
            raise ConfigurationError(f"sampler.scheme must be one of {SCHEMES}")
        if s.total_budget < 0:
            raise ConfigurationError("schedule.total_budget must be >= 0")
        if s.total_budget and s.total_budget < s.queries_per_session:
            raise ConfigurationError("schedule.total_budget must be >= queries_per_session "
                                     "(or 0 to disable reward learning)")
        if s.queries_per_session < 1:
            raise ConfigurationError("schedule.queries_per_session must be >= 1")
        if self.segment_length < 1:
            raise ConfigurationError("segment_length must be >= 1")
        if s.warmup_steps < self.segment_length:
            raise ConfigurationError("schedule.warmup_steps must cover one segment")
        if s.buffer_capacity < self.segment_length:
            raise ConfigurationError("schedule.buffer_capacity must cover one segment")
        if self.reward.layers < 0 or self.reward.hidden < 1 or self.reward.ensemble < 1:
            raise ConfigurationError("reward architecture values must be positive")
        if self.sampler.candidates_per_query < 1:
            raise ConfigurationError("sampler.candidates_per_query must be >= 1")
        # sub-configs validate themselves on construction; re-run for edits
        self.annotator.to_annotator_config()
        ssl_dict = dataclasses.asdict(self.ssl)
        aug = ssl_dict.pop("augment")
        SSLConfig(augment=AugmentConfig(**aug), **ssl_dict)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


# -- YAML round-trip -----------------------------------------------------------

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def config_to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_to_plain(cfg), sort_keys=False)


_SECTIONS = {
    "env": EnvSettings,
    "annotator": AnnotatorSettings,
    "reward": RewardSettings,
    "sampler": SamplerSettings,
    "schedule": ScheduleSettings,
    "agent": AgentConfig,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    cfg_kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, None) or {}
        if not isinstance(section, dict):
            raise ConfigurationError(f"section {name!r} must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ConfigurationError(f"unknown keys in {name!r}: {sorted(unknown)}")
        section = {k: (float(v) if isinstance(v, str) and v.strip("+-") == "inf" else v)
                   for k, v in section.items()}
        cfg_kwargs[name] = cls(**section)
    ssl_section = data.pop("ssl", None) or {}
    aug = ssl_section.pop("augment", None) or {}
    cfg_kwargs["ssl"] = SSLConfig(augment=AugmentConfig(**aug), **ssl_section)
    for key in ("segment_length", "seed"):
        if key in data:
            cfg_kwargs[key] = data.pop(key)
    if data:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(data)}")
    return ExperimentConfig(**cfg_kwargs)


def config_from_yaml(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML: {e}") from None
    if data is None:
        return default_config()
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        cfg = config_from_yaml(f.read())
    cfg.validate()
    return cfg
