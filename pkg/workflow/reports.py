import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

from encompassing.bayes_factors import Type2Report
from identification.ucfm import IdentificationReport
from marglik.dimensionality import DimensionalitySelection
from sampler.diagnostics import Diagnostics, PosteriorSummary
from workflow import settings
from workflow.config import Bf2Config, DimSelectConfig, PipelineConfig


class EnvironmentStamp(BaseModel):
    version: str = settings.VERSION
    seed: int


class DimSelectReport(BaseModel):
    config: DimSelectConfig
    environment: EnvironmentStamp
    selection: DimensionalitySelection


class Bf2Report(BaseModel):
    config: Bf2Config
    environment: EnvironmentStamp
    identification: IdentificationReport
    identification_overridden: bool = False
    type2: Type2Report
    base_diagnostics: Diagnostics = Field(..., description="Convergence diagnostics of the base-model draws.")
    base_posterior: PosteriorSummary = Field(..., description="Posterior summary of the base-model draws.")


class PipelineReport(BaseModel):
    config: PipelineConfig
    environment: EnvironmentStamp
    stages_completed: List[str] = Field(default_factory=list)
    dimensionality: Optional[DimensionalitySelection] = None
    identification: Optional[IdentificationReport] = None
    identification_overridden: bool = False
    constraint_files: List[str] = Field(default_factory=list)
    base_diagnostics: Optional[Diagnostics] = None
    base_posterior: Optional[PosteriorSummary] = None
    type2: Optional[Type2Report] = None
    notes: List[str] = Field(default_factory=list)
    failed_stage: Optional[str] = None
    error: Optional[str] = None


def write_report(report: BaseModel, file_path: str):
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logging.debug(f"Wrote {path}")


def write_timings(timings: Dict[str, float], file_path: str):
    """Wall-clock seconds per stage, kept apart from the reproducible reports."""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")


def dimensionality_table(selection: DimensionalitySelection) -> str:
    rows = []
    for r in selection.records:
        rows.append({
            "k": r.k,
            "log marginal": r.log_marginal,
            "se": r.standard_error,
            "sv ratio": r.regularity.singular_value_ratio if r.regularity else None,
            "admissible": r.admissible,
            "selected": "*" if r.k == selection.selected_k else "",
        })
    return pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.3f}")


def identification_table(report: IdentificationReport) -> str:
    rows = [{
        "condition": c.name,
        "passed": c.passed,
        "columns": ",".join(map(str, c.columns)),
        "rows": ",".join(map(str, c.rows)),
    } for c in report.conditions]
    verdict = "identified" if report.overall else "NOT identified"
    return pd.DataFrame(rows).to_string(index=False) + f"\n\nbase pattern {verdict}"


def type2_table(report: Type2Report) -> str:
    rows = [{
        "model": r.name,
        "prior mass": r.prior_mass.proportion,
        "posterior mass": r.posterior_mass.proportion,
        "log BF vs u": r.log_bf_vs_unconstrained,
        "se": r.standard_error,
        "P(model | y)": r.posterior_probability,
    } for r in report.models]
    return pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.4f}")
