"""
Pydantic models for ebmlife experiments.
Defines the experiment document, run manifests and metrics rows.
"""
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator

from .config import DEFENSE_DEFAULTS, PRIOR_DEFAULTS, SAMPLE_DEFAULTS, Activation, PriorMode, Regime, RejuvenationKind, SampleInit
from .defense import AttackConfig, DefenseConfig
from .errors import ConfigError
from .router import DATASETS
from .trainer import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    """[data]"""
    dataset: str = "double-well-1d"
    data_size: int = Field(default=0, ge=0)
    data_epsilon: Optional[float] = Field(default=None, ge=0)

    @field_validator("dataset")
    @classmethod
    def _known_dataset(cls, value: str) -> str:
        if value not in DATASETS:
            raise ValueError(f"unknown dataset {value}; valid options: {sorted(DATASETS)}")
        return value


class EnergySection(_Section):
    """[energy]"""
    kind: Literal["mlp", "quadratic", "double-well", "zero", "data-density"] = "mlp"
    hidden: Tuple[int, ...] = (64, 64)
    activation: Activation = Activation.LEAKY_RELU
    prior: PriorMode = PriorMode.NONE
    prior_checkpoint: Optional[str] = None
    sigma: Optional[float] = Field(default=None, gt=0)


class SamplerSection(_Section):
    """[sampler]"""
    step_size: Optional[float] = Field(default=None, gt=0)
    mcmc_steps: Optional[int] = Field(default=None, ge=0)
    temperature: Optional[float] = Field(default=None, gt=0)
    burn_in_steps: Optional[int] = Field(default=None, ge=0)


class BankSection(_Section):
    """[bank]; `p_rejuv` is accepted for rejuvenation_probability"""
    bank_size: Optional[int] = Field(default=None, gt=0)
    burn_in_size: Optional[int] = Field(default=None, gt=0)
    burn_in_threshold: Optional[int] = Field(default=None, ge=1)
    rejuvenation_probability: Optional[float] = Field(
        default=None, ge=0, le=1, validation_alias=AliasChoices("rejuvenation_probability", "p_rejuv")
    )
    rejuvenation_source: Optional[RejuvenationKind] = None
    noise_distribution: Optional[Literal["uniform", "normal"]] = None
    noise_scale: Optional[float] = Field(default=None, gt=0)
    max_update_rounds: Optional[int] = Field(default=None, ge=1)


class TrainerSection(_Section):
    """[trainer]"""
    regime: Optional[Regime] = None
    total_steps: Optional[int] = Field(default=None, ge=0)
    batch_size: Optional[int] = Field(default=None, gt=0)
    lr_schedule: Optional[Union[float, List[Tuple[float, int]]]] = None
    grad_clip: Optional[float] = Field(default=None, ge=0)
    generator_lr: Optional[float] = Field(default=None, gt=0)
    generator_grad_clip: Optional[float] = Field(default=None, ge=0)
    generator_recenter: Optional[bool] = None
    generator_hidden: Optional[Tuple[int, ...]] = None
    latent_dim: Optional[int] = Field(default=None, gt=0)
    defense_steps: Optional[int] = Field(default=None, gt=0)
    metrics_every: Optional[int] = Field(default=None, ge=1)
    checkpoint_every: Optional[int] = Field(default=None, ge=0)
    fixture_fit_steps: int = Field(default=2000, ge=0, description="frozen generator fitting budget")
    prior_steps: Optional[int] = Field(default=None, ge=0, description="prior training steps when energy.prior = train")


class DefenseSection(_Section):
    """[defense]"""
    attack_steps: int = Field(default=DEFENSE_DEFAULTS["attack_steps"], ge=1)
    epsilon: float = Field(default=DEFENSE_DEFAULTS["epsilon"], ge=0)
    alpha: float = Field(default=DEFENSE_DEFAULTS["alpha"], gt=0)
    attack_reps: int = Field(default=DEFENSE_DEFAULTS["attack_reps"], ge=1)
    defense_reps: int = Field(default=DEFENSE_DEFAULTS["defense_reps"], ge=1)
    defense_steps: int = Field(default=DEFENSE_DEFAULTS["defense_steps"], ge=0)
    step_size: float = Field(default=DEFENSE_DEFAULTS["step_size"], gt=0)
    temperature: float = Field(default=DEFENSE_DEFAULTS["temperature"], gt=0)
    random_start: bool = DEFENSE_DEFAULTS["random_start"]
    num_examples: int = Field(default=100, ge=1)
    classifier_hidden: int = Field(default=32, ge=0)
    classifier_steps: int = Field(default=500, ge=0)
    classifier_lr: float = Field(default=0.5, gt=0)


class OutputSection(_Section):
    """[output]"""
    checkpoint: Optional[str] = None
    init: SampleInit = SampleInit.GENERATOR
    num_samples: int = Field(default=1000, ge=1)
    mcmc_steps: int = Field(default=SAMPLE_DEFAULTS["mcmc_steps"], ge=0)
    step_size: float = Field(default=SAMPLE_DEFAULTS["step_size"], gt=0)
    temperature: float = Field(default=SAMPLE_DEFAULTS["temperature"], gt=0)
    num_chains: int = Field(default=512, ge=1)
    record_every: int = Field(default=1000, ge=0)
    histogram_burn_in: int = Field(default=0, ge=0)
    lifetime_bins: int = Field(default=50, ge=1)


SECTIONS = {
    "data": DataSection,
    "energy": EnergySection,
    "sampler": SamplerSection,
    "bank": BankSection,
    "trainer": TrainerSection,
    "defense": DefenseSection,
    "output": OutputSection,
}

# TrainConfig fields contributed by each section
_TRAIN_FIELDS = {
    "data": ("data_size", "data_epsilon"),
    "energy": ("sigma",),
    "sampler": ("step_size", "mcmc_steps", "temperature", "burn_in_steps"),
    "bank": (
        "bank_size", "burn_in_size", "burn_in_threshold", "rejuvenation_probability",
        "rejuvenation_source", "noise_distribution", "noise_scale", "max_update_rounds",
    ),
    "trainer": (
        "total_steps", "batch_size", "lr_schedule", "grad_clip", "generator_lr", "generator_grad_clip",
        "generator_recenter", "generator_hidden", "latent_dim", "defense_steps", "metrics_every", "checkpoint_every",
    ),
}


def _messages(prefix: str, exc: ValidationError) -> List[str]:
    messages = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"])
        messages.append(f"{prefix}.{loc}: {err['msg']}" if loc else f"{prefix}: {err['msg']}")
    return messages


class ExperimentConfig(BaseModel):
    """A validated experiment document"""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(ge=0, lt=2 ** 64)
    data: DataSection = DataSection()
    energy: EnergySection = EnergySection()
    sampler: SamplerSection = SamplerSection()
    bank: BankSection = BankSection()
    trainer: TrainerSection = TrainerSection()
    defense: DefenseSection = DefenseSection()
    output: OutputSection = OutputSection()

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ExperimentConfig":
        """
        Validate a parsed document, reporting every problem at once.

        Raises:
            ConfigError: With one message per offending key
        """
        errors: List[str] = []
        for key in raw:
            if key != "seed" and key not in SECTIONS:
                errors.append(f"{key}: unknown section or key; valid sections: {sorted(SECTIONS)}")
        if "seed" not in raw:
            errors.append("seed: a global seed is required")

        sections = {}
        for name, model in SECTIONS.items():
            value = raw.get(name, {})
            if not isinstance(value, dict):
                errors.append(f"{name}: expected a table")
                continue
            try:
                sections[name] = model.model_validate(value)
            except ValidationError as exc:
                errors.extend(_messages(name, exc))

        config = None
        if not errors:
            try:
                config = cls(seed=raw["seed"], **sections)
            except ValidationError as exc:
                errors.extend(_messages("config", exc))
        if config is not None and config.trainer.regime is not None:
            try:
                config.train_config(config.trainer.regime)
            except ConfigError as exc:
                errors.extend(exc.errors)
        if errors:
            raise ConfigError(errors)
        return config

    def _train_overrides(self) -> Dict[str, Any]:
        overrides = {}
        for section, names in _TRAIN_FIELDS.items():
            values = getattr(self, section)
            overrides.update({name: getattr(values, name) for name in names})
        return overrides

    def train_config(self, regime: Regime) -> TrainConfig:
        """
        TrainConfig for `regime`: regime defaults, then every value set in the document.

        Raises:
            ConfigError: If the regime disagrees with [trainer] regime or the result is invalid
        """
        regime = Regime(regime)
        if self.trainer.regime is not None and self.trainer.regime != regime:
            raise ConfigError([f"trainer.regime: document says {self.trainer.regime.value}, run asked for {regime.value}"])
        try:
            return TrainConfig.for_regime(regime, **self._train_overrides())
        except ValidationError as exc:
            raise ConfigError(_messages("trainer", exc)) from exc

    def prior_config(self) -> TrainConfig:
        """Midrun-style TrainConfig for the frozen prior of a longrun energy"""
        overrides = dict(PRIOR_DEFAULTS)
        overrides.update(
            batch_size=self.trainer.batch_size,
            total_steps=self.trainer.prior_steps,
            data_size=self.data.data_size,
            rejuvenation_source=self.bank.rejuvenation_source,
            noise_distribution=self.bank.noise_distribution,
            noise_scale=self.bank.noise_scale,
            metrics_every=self.trainer.metrics_every,
        )
        try:
            return TrainConfig.for_regime(Regime.MIDRUN, **overrides)
        except ValidationError as exc:
            raise ConfigError(_messages("prior", exc)) from exc

    def attack_config(self) -> AttackConfig:
        d = self.defense
        return AttackConfig(
            epsilon=d.epsilon, alpha=d.alpha, steps=d.attack_steps, reps=d.attack_reps, random_start=d.random_start
        )

    def defense_config(self) -> DefenseConfig:
        d = self.defense
        return DefenseConfig(steps=d.defense_steps, reps=d.defense_reps, step_size=d.step_size, temperature=d.temperature)


class MetricsRow(BaseModel):
    """One row of metrics.csv"""
    step: int
    lr: float
    mean_pos_energy: float
    mean_neg_energy: float
    grad_norm: float
    diversity: float
    rejuvenation_count: int
    promotion_count: int
    wall_ms: float


class RunManifest(BaseModel):
    """manifest.json written for every CLI run"""
    run_id: str
    subcommand: str
    timestamp: datetime
    seed: int
    config: Dict[str, Any]
    config_hash: str
    code_version: str
    wall_time_s: float
    rss_mb: float
    summary: Dict[str, Any] = Field(default_factory=dict)
    success: bool = True
    error_message: Optional[str] = None
