##################
## Command configuration: JSON or YAML files validated into pydantic
## models. Defaults come from the environment (workflow.settings); the
## command line overrides the file.
##################

import json
from pathlib import Path
from typing import List, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from encompassing.mass import PhiMode
from factor.errors import UsageError
from marglik.intrinsic import DEFAULT_SUBSAMPLES, Averaging
from marglik.regularity import RegularityThresholds
from sampler.priors import ChainConfig
from workflow import settings

Config = TypeVar("Config", bound=BaseModel)


class ChainSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_iter: int = Field(default_factory=lambda: settings.N_ITER, gt=0)
    burn_in: int = Field(default_factory=lambda: settings.BURN_IN, ge=0)
    thin: int = Field(1, gt=0)
    n_chains: int = Field(default_factory=lambda: settings.N_CHAINS, gt=0)
    max_workers: int = Field(1, gt=0)

    def to_chain_config(self, seed: int, retain_scores: str = "none") -> ChainConfig:
        try:
            return ChainConfig(seed=seed, retain_scores=retain_scores, **self.model_dump())
        except ValidationError as exc:
            raise UsageError(f"chain settings: {validation_message(exc)}")


class SimulateConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spec: str = Field(..., description="JSON file holding the true model, n and seed.")
    seed: Optional[int] = Field(None, ge=0, description="Overrides the seed in the spec file.")
    out: Optional[str] = Field(None, description="CSV file to write.")


class DimSelectConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: str
    k_max: int = Field(..., ge=1)
    standardize: bool = True
    chain: ChainSettings = Field(default_factory=ChainSettings)
    thresholds: RegularityThresholds = Field(default_factory=RegularityThresholds)
    n_train: Optional[int] = Field(None, gt=0, description="Training-sample size; k_max + 3 when omitted.")
    n_subsamples: int = Field(DEFAULT_SUBSAMPLES, gt=0)
    averaging: Averaging = "arithmetic"
    histogram_bins: int = Field(50, gt=0)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    out: str = Field(default_factory=lambda: settings.OUTPUT_DIR)


class CheckConfig(BaseModel):
    # a pipeline configuration file doubles as a check configuration
    model_config = ConfigDict(extra="ignore")

    pattern: str
    out: str = Field(default_factory=lambda: settings.OUTPUT_DIR)


class Bf2Config(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: Optional[str] = Field(None, description="CSV dataset; not needed when draws are supplied.")
    pattern: str
    draws: Optional[str] = Field(None, description="Draw export of the base model; skips sampling (offline mode).")
    constraints: List[str] = Field(default_factory=list, description="One .fcs file per competing model.")
    standardize: bool = True
    oblique: bool = Field(True, description="Sample Phi under the correlation prior instead of fixing it at I.")
    chain: ChainSettings = Field(default_factory=ChainSettings)
    phi_mode: PhiMode = PhiMode.IDENTITY
    n_prior_draws: int = Field(default_factory=lambda: settings.PRIOR_DRAWS, gt=0)
    prior_odds: Optional[List[float]] = Field(None, description="Prior model weights, unconstrained model first.")
    allow_unidentified: bool = False
    export_draws: bool = False
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    out: str = Field(default_factory=lambda: settings.OUTPUT_DIR)

    @model_validator(mode="after")
    def _check_sources(self):
        if self.data is None and self.draws is None:
            raise ValueError("either data or draws is required")
        return self


class PipelineConfig(Bf2Config):
    data: str
    k_max: int = Field(..., ge=1)
    thresholds: RegularityThresholds = Field(default_factory=RegularityThresholds)
    n_train: Optional[int] = Field(None, gt=0)
    n_subsamples: int = Field(DEFAULT_SUBSAMPLES, gt=0)
    averaging: Averaging = "arithmetic"
    histogram_bins: int = Field(50, gt=0)

    def dim_select(self) -> DimSelectConfig:
        return DimSelectConfig(**{name: getattr(self, name) for name in DimSelectConfig.model_fields})


PATH_FIELDS = ("spec", "data", "pattern", "draws")


def _resolve(config: BaseModel, base: Path) -> BaseModel:
    """Paths in a config file are relative to the file."""
    update = {}
    for name in PATH_FIELDS:
        value = getattr(config, name, None)
        if value is not None and not Path(value).is_absolute():
            update[name] = str(base / value)
    constraints = getattr(config, "constraints", None)
    if constraints:
        update["constraints"] = [c if Path(c).is_absolute() else str(base / c) for c in constraints]
    return config.model_copy(update=update)


def validation_message(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors())


def validate(model: Type[Config], payload: dict, source: str) -> Config:
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        raise UsageError(f"{source}: {validation_message(exc)}")


def read_structured(file_path: str) -> dict:
    path = Path(file_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {file_path}: {exc.strerror}")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            payload = yaml.safe_load(text)
        else:
            payload = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise UsageError(f"{file_path}: {exc}")
    if not isinstance(payload, dict):
        raise UsageError(f"{file_path}: expected a mapping at the top level")
    return payload


def load_config(model: Type[Config], file_path: str) -> Config:
    config = validate(model, read_structured(file_path), file_path)
    return _resolve(config, Path(file_path).resolve().parent)


def apply_overrides(config: Config, **overrides) -> Config:
    """Command-line values win over the file; None means not given."""
    update = {k: v for k, v in overrides.items() if v is not None}
    if not update:
        return config
    return validate(type(config), {**config.model_dump(), **update}, "command line")
