import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from vlatrainer.errors import ConfigError
from vlatrainer.utils.constants import INSTRUCTION_LENGTH, SUITE_IDS

# Find project root (where .env is located)
PROJECT_ROOT = Path(__file__).parent.parent.parent.parent
ENV_FILE = PROJECT_ROOT / ".env"


class Settings(BaseSettings):
    log_level: str = "INFO"
    run_dir: Optional[str] = Field(default=None, description="Overrides the run directory of every command")
    max_worker_threads: int = Field(default=4, ge=1, description="Maximum concurrent environment shard threads")

    model_config = SettingsConfigDict(
        env_prefix="VLA_TRAINER_",
        env_file=str(ENV_FILE),
        env_file_encoding="utf-8",
        case_sensitive=False,
    )


@lru_cache
def get_settings() -> Settings:
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SuiteConfig(_Section):
    suites: list[str] = Field(default_factory=lambda: list(SUITE_IDS))
    tasks_per_suite: int = Field(10, ge=1)
    placement_jitter: float = Field(0.05, ge=0.0, le=0.1)
    yaw_range: float = Field(0.8, ge=0.0, le=3.0)
    instruction_length: int = Field(INSTRUCTION_LENGTH, ge=1)

    @model_validator(mode="after")
    def _known_suites(self) -> "SuiteConfig":
        unknown = set(self.suites) - set(SUITE_IDS)
        if unknown:
            raise ValueError(f"Unknown suites: {sorted(unknown)}")
        return self


class SimConfig(_Section):
    horizon: int = Field(60, ge=1)
    workspace: float = Field(1.0, gt=0.0)
    scale_t: float = Field(0.08, gt=0.0)
    scale_r: float = Field(0.3, gt=0.0)
    grasp_radius: float = Field(0.08, gt=0.0)
    yaw_tol: float = Field(0.4, gt=0.0)
    region_radius: float = Field(0.12, gt=0.0)
    place_height: float = Field(0.15, gt=0.0)
    start_height: float = Field(0.3, ge=0.0)


class PolicyConfig(_Section):
    width: int = Field(256, ge=1)


class SftConfig(_Section):
    episodes_per_task: int = Field(25, ge=0)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(3e-4, gt=0.0)
    expert_failure_warning: float = Field(0.05, ge=0.0, le=1.0)


class RprmConfig(_Section):
    delta_g: float = Field(0.5, ge=0.0)
    eps_v: float = Field(0.01, ge=0.0)
    window: int = Field(3, ge=1)
    beta: float = Field(0.1, ge=0.0)
    width: int = Field(256, ge=1)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(3e-4, gt=0.0)
    holdout_fraction: float = Field(0.1, gt=0.0, lt=1.0)


class CurriculumConfig(_Section):
    alpha: float = Field(0.1, gt=0.0, le=1.0)
    tau: float = Field(0.25, gt=0.0)
    prior: float = Field(0.5, ge=0.0, le=1.0)
    uniform: bool = False


class PpoConfig(_Section):
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    lambda_gae: float = Field(0.95, gt=0.0, le=1.0)
    clip_eps: float = Field(0.2, gt=0.0, lt=1.0)
    epochs: int = Field(4, ge=1)
    minibatch_size: int = Field(256, ge=1)
    value_coef: float = Field(0.5, ge=0.0)
    entropy_coef: float = Field(0.003, ge=0.0)
    lr: float = Field(2e-5, gt=0.0)
    max_grad_norm: float = Field(1.0, gt=0.0)
    warmup_iters: int = Field(5, ge=0)
    target_kl: float = Field(0.02, gt=0.0)
    value_clip: Optional[float] = Field(None, gt=0.0)
    temperature: float = Field(1.5, ge=0.0)
    num_envs: int = Field(16, ge=1)
    steps_per_update: int = Field(256, ge=1)
    iterations: int = Field(100, ge=0)
    checkpoint_every: int = Field(10, ge=0)
    eval_every: int = Field(10, ge=0)
    eval_episodes_per_task: int = Field(5, ge=1)


class OrchestratorConfig(_Section):
    num_shards: Optional[int] = Field(None, ge=1, description="Defaults to min(4, num_envs)")


class EvalConfig(_Section):
    episodes_per_task: int = Field(10, ge=1)
    batch_size: int = Field(16, ge=1)


class ExportConfig(_Section):
    coverage_stride: int = Field(8, ge=1)


# Keys whose deviation from the defaults names an ablation arm.
_ABLATION_TAGS = {
    ("rprm", "beta"): lambda v: "no-rprm" if v == 0 else f"beta{v:g}",
    ("curriculum", "uniform"): lambda v: "no-curriculum" if v else "",
    ("ppo", "warmup_iters"): lambda v: f"warmup{v}",
    ("ppo", "temperature"): lambda v: f"temp{v:.1f}",
    ("ppo", "lr"): lambda v: f"lr{v:.0e}",
}


class RunConfig(_Section):
    seed: int = 0
    output_dir: str = "runs"
    tag: Optional[str] = None
    suite: SuiteConfig = Field(default_factory=SuiteConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    sft: SftConfig = Field(default_factory=SftConfig)
    rprm: RprmConfig = Field(default_factory=RprmConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    ppo: PpoConfig = Field(default_factory=PpoConfig)
    orchestrator: OrchestratorConfig = Field(default_factory=OrchestratorConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    export: ExportConfig = Field(default_factory=ExportConfig)

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "RunConfig":
        """
        Build a config from module-prefixed keys, e.g. {"ppo.lr": 2e-5, "seed": 1}.

        Raises:
            ConfigError: On unknown keys or invalid values
        """
        nested: dict[str, Any] = {}
        for key, value in flat.items():
            section, dot, name = key.partition(".")
            if not dot:
                nested[key] = value
                continue
            if "." in name:
                raise ConfigError(f"Config key nests too deep: {key}")
            bucket = nested.setdefault(section, {})
            if not isinstance(bucket, dict):
                raise ConfigError(f"Config key {section!r} is both a value and a section")
            bucket[name] = value
        try:
            return cls.model_validate(nested)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for key, value in self.model_dump(mode="json").items():
            if isinstance(value, dict):
                for name, inner in value.items():
                    flat[f"{key}.{name}"] = inner
            else:
                flat[key] = value
        return dict(sorted(flat.items()))

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        flat = self.to_flat()
        for key in overrides:
            if key not in flat:
                raise ConfigError(f"Unknown config key: {key}")
        flat.update(overrides)
        return RunConfig.from_flat(flat)

    def canonical_json(self) -> str:
        return json.dumps(self.to_flat(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def run_tag(self) -> str:
        if self.tag:
            return self.tag
        defaults = RunConfig()
        parts = []
        for (section, name), describe in _ABLATION_TAGS.items():
            value = getattr(getattr(self, section), name)
            if value != getattr(getattr(defaults, section), name):
                label = describe(value)
                if label:
                    parts.append(label)
        return "+".join(parts) or "default"

    def shard_count(self) -> int:
        return self.orchestrator.num_shards or min(4, self.ppo.num_envs)


def load_run_config(path: Optional[Path], overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Read a flat JSON config (defaults when `path` is None) and apply overrides."""
    flat: dict[str, Any] = {}
    if path is not None:
        try:
            flat = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(flat, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
    config = RunConfig.from_flat(flat)
    if overrides:
        config = config.with_overrides(overrides)
    return config


def parse_override(text: str) -> tuple[str, Any]:
    """
    Parse a `key=value` override; the value is read as JSON when possible.

    Example:
        >>> parse_override("ppo.lr=2e-4")
        ('ppo.lr', 0.0002)
        >>> parse_override("tag=ablation")
        ('tag', 'ablation')
    """
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"Override must look like key=value: {text!r}")
    try:
        return key.strip(), json.loads(raw)
    except json.JSONDecodeError:
        return key.strip(), raw
