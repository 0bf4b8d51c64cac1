##################
## The commands behind the CLI and the four-stage selection pipeline:
##   dimensionality -> identification -> constraints -> type2
## Each pipeline stage rewrites pipeline_report.json so an abort leaves
## the completed stages on disk.
##################

import logging
import time
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from constraints.binding import BoundSystem, bind
from constraints.parser import parse_file
from encompassing.bayes_factors import Type2Report, type2_bayes_factors
from factor.algebra import generate_synthetic
from factor.errors import FactorSelectionError, ModelError, StageError, UsageError
from factor.model import Dataset, PatternMatrix
from factor.records import TrueModelRecord
from factor.seeding import derive_seed
from files.patterns import load_pattern
from files.tables import export_draws, import_draws, load_dataset, save_dataset, write_histograms
from identification.ucfm import IdentificationReport, check_ucfm
from marglik.dimensionality import DimensionalitySelection, select_dimensionality
from sampler.diagnostics import Diagnostics, PosteriorSummary, diagnostics, posterior_summary
from sampler.gibbs import Chain, run_chains
from sampler.priors import PriorSpec
from workflow.config import (Bf2Config, CheckConfig, DimSelectConfig, PipelineConfig, SimulateConfig, read_structured,
                             validate)
from workflow.reports import (Bf2Report, DimSelectReport, EnvironmentStamp, PipelineReport, write_report,
                              write_timings)

TYPE2_CHAIN_KEY = 501
TYPE2_PRIOR_KEY = 502

STAGES = ("dimensionality", "identification", "constraints", "type2")


def cmd_simulate(config: SimulateConfig) -> Dataset:
    """Write a synthetic dataset drawn from the true model in the spec file."""
    record = validate(TrueModelRecord, read_structured(config.spec), config.spec)
    if config.seed is not None:
        record = record.model_copy(update={"seed": config.seed})
    try:
        spec = record.to_spec()
    except ValueError as exc:
        raise UsageError(f"{config.spec}: {exc}")
    data = generate_synthetic(spec)
    out = config.out or str(Path(config.spec).with_suffix(".csv"))
    save_dataset(data, out)
    logging.info(f"Wrote {data.n} observations on {data.p} items to {out}")
    return data


def _dimensionality(data: Dataset, config: DimSelectConfig, out_dir: Path) -> DimensionalitySelection:
    selection = select_dimensionality(
        data,
        config.k_max,
        PriorSpec.improper(),
        config.chain.to_chain_config(config.seed),
        thresholds=config.thresholds,
        n_train=config.n_train,
        n_subsamples=config.n_subsamples,
        averaging=config.averaging,
    )
    for record in selection.records:
        write_histograms(selection.chains_for(record.k), str(out_dir / f"histograms_k{record.k}.csv"),
                         config.histogram_bins)
    return selection


def cmd_dim_select(config: DimSelectConfig) -> DimSelectReport:
    out_dir = Path(config.out)
    data = load_dataset(config.data, standardize_data=config.standardize)
    selection = _dimensionality(data, config, out_dir)
    report = DimSelectReport(config=config, environment=EnvironmentStamp(seed=config.seed), selection=selection)
    write_report(report, str(out_dir / "dimensionality.json"))
    return report


def cmd_check(config: CheckConfig) -> IdentificationReport:
    report = check_ucfm(load_pattern(config.pattern))
    write_report(report, str(Path(config.out) / "identification.json"))
    return report


def _require_identified(report: IdentificationReport, allow_unidentified: bool) -> bool:
    """True when an unidentified pattern was let through by the override."""
    if report.overall:
        return False
    failed = ", ".join(report.failed)
    if not allow_unidentified:
        raise ModelError(f"base pattern is not identified (fails {failed}); use --allow-unidentified to override")
    logging.warning(f"Continuing with an unidentified base pattern (fails {failed}) on explicit override")
    return True


def _bind_all(paths: List[str], pattern: PatternMatrix) -> List[BoundSystem]:
    bounds = []
    for path in paths:
        if not Path(path).is_file():
            raise UsageError(f"constraint file not found: {path}")
        bounds.append(bind(parse_file(path), pattern, source=Path(path).name))
        logging.info(f"Bound '{bounds[-1].name}' from {path}: {len(bounds[-1].mass_relations)} mass relations")
    return bounds


class BaseModelDraws(NamedTuple):
    chains: List[Chain]
    diagnostics: Diagnostics
    posterior: PosteriorSummary


def _base_draws(data: Optional[Dataset], pattern: PatternMatrix, config: Bf2Config, out_dir: Path) -> BaseModelDraws:
    """Posterior draws of the base model: sampled, or read back from a draw export."""
    if config.draws is not None:
        chains = import_draws(config.draws, pattern)
        logging.info(f"Read {sum(c.n_draws for c in chains)} base-model draws from {config.draws}")
    else:
        chain_config = config.chain.to_chain_config(derive_seed(config.seed, TYPE2_CHAIN_KEY))
        chain_config.warn_if_short()
        chains = run_chains(data, pattern, PriorSpec.ball(oblique=config.oblique), chain_config)
        if config.export_draws:
            export_draws(chains, str(out_dir / "draws.csv"))
    return BaseModelDraws(chains, diagnostics(chains), posterior_summary(chains))


def _type2(bounds: List[BoundSystem], base: BaseModelDraws, config: Bf2Config) -> Type2Report:
    return type2_bayes_factors(
        bounds,
        base.chains,
        phi_mode=config.phi_mode,
        n_prior_draws=config.n_prior_draws,
        prior_seed=derive_seed(config.seed, TYPE2_PRIOR_KEY),
        prior_odds=config.prior_odds,
        max_workers=config.chain.max_workers,
    )


def _load_base(config: Bf2Config) -> Tuple[Optional[Dataset], PatternMatrix]:
    pattern = load_pattern(config.pattern)
    if config.data is None:
        return None, pattern
    data = load_dataset(config.data, standardize_data=config.standardize)
    if pattern.p != data.p:
        raise UsageError(f"pattern has {pattern.p} rows but the data have {data.p} items")
    return data, pattern


def cmd_bf2(config: Bf2Config) -> Bf2Report:
    out_dir = Path(config.out)
    data, pattern = _load_base(config)
    identification = check_ucfm(pattern)
    overridden = _require_identified(identification, config.allow_unidentified)
    bounds = _bind_all(config.constraints, pattern)
    base = _base_draws(data, pattern, config, out_dir)
    report = Bf2Report(
        config=config,
        environment=EnvironmentStamp(seed=config.seed),
        identification=identification,
        identification_overridden=overridden,
        type2=_type2(bounds, base, config),
        base_diagnostics=base.diagnostics,
        base_posterior=base.posterior,
    )
    write_report(report, str(out_dir / "type2_report.json"))
    return report


class _Stages:
    """Runs named stages in order, saving the partial report after each."""

    def __init__(self, report: PipelineReport, out_dir: Path):
        self.report = report
        self.out_dir = out_dir
        self.path = str(out_dir / "pipeline_report.json")
        self.timings: Dict[str, float] = {}

    def run(self, stage: str, fn):
        logging.info(f"Stage '{stage}' started")
        start = time.perf_counter()
        try:
            result = fn()
        except (FactorSelectionError, np.linalg.LinAlgError) as exc:
            self.timings[stage] = time.perf_counter() - start
            self.report.failed_stage = stage
            self.report.error = str(exc)
            self._save()
            logging.error(f"Stage '{stage}' failed: {exc}")
            raise StageError(stage, exc, self.report)
        self.timings[stage] = time.perf_counter() - start
        self.report.stages_completed.append(stage)
        self._save()
        logging.info(f"Stage '{stage}' finished in {self.timings[stage]:.1f}s")
        return result

    def _save(self):
        write_report(self.report, self.path)
        write_timings(self.timings, str(self.out_dir / "timings.json"))


def cmd_pipeline(config: PipelineConfig) -> PipelineReport:
    """
    Dimensionality selection, identification of the supplied base pattern,
    binding of the competing constraint systems and Type II selection.

    Raises:
        StageError: wrapping the failure, with the partial report attached.
    """
    out_dir = Path(config.out)
    report = PipelineReport(config=config, environment=EnvironmentStamp(seed=config.seed))
    stages = _Stages(report, out_dir)
    state = {}

    def dimensionality():
        state["data"] = load_dataset(config.data, standardize_data=config.standardize)
        report.dimensionality = _dimensionality(state["data"], config.dim_select(), out_dir)

    def identification():
        pattern = load_pattern(config.pattern)
        if pattern.p != state["data"].p:
            raise UsageError(f"pattern has {pattern.p} rows but the data have {state['data'].p} items")
        selected = report.dimensionality.selected_k
        if pattern.m != selected:
            note = f"base pattern has {pattern.m} factors but dimensionality selection chose k = {selected}"
            report.notes.append(note)
            logging.warning(note)
        report.identification = check_ucfm(pattern)
        report.identification_overridden = _require_identified(report.identification, config.allow_unidentified)
        state["pattern"] = pattern

    def constraints():
        state["bounds"] = _bind_all(config.constraints, state["pattern"])
        report.constraint_files = [Path(p).name for p in config.constraints]

    def type2():
        base = _base_draws(state["data"], state["pattern"], config, out_dir)
        report.base_diagnostics = base.diagnostics
        report.base_posterior = base.posterior
        report.type2 = _type2(state["bounds"], base, config)

    for stage, fn in zip(STAGES, (dimensionality, identification, constraints, type2)):
        stages.run(stage, fn)
    if report.type2 is not None:
        logging.info(f"Best supported model: {report.type2.best()}")
    return report
