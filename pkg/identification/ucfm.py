##################
## Pattern-level identification check of an unrestricted confirmatory
## factor model (UCFM): scaling, zero counts, structural rank with distinct
## zero-row sets, and one positive anchor per column.
##################

import logging
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from factor.errors import UsageError
from factor.model import CellKind, PatternMatrix


class ConditionResult(BaseModel):
    name: str
    description: str
    passed: bool
    columns: List[int] = Field(default_factory=list, description="1-based columns violating the condition.")
    rows: List[int] = Field(default_factory=list, description="1-based rows involved in the violations.")
    details: List[str] = Field(default_factory=list)


class LedermannCheck(BaseModel):
    free_parameters: int
    moments: int
    exceeded: bool


class IdentificationReport(BaseModel):
    p: int
    m: int
    conditions: List[ConditionResult]
    overall: bool
    ledermann: LedermannCheck
    warnings: List[str] = Field(default_factory=list)

    def condition(self, name: str) -> ConditionResult:
        return next(c for c in self.conditions if c.name == name)

    @property
    def failed(self) -> List[str]:
        return [c.name for c in self.conditions if not c.passed]


def structural_rank(mask: np.ndarray) -> int:
    """Generic rank of a matrix whose nonzero pattern is `mask` (maximum bipartite matching)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0 or not mask.any():
        return 0
    matching = maximum_bipartite_matching(csr_matrix(mask.astype(np.int8)), perm_type="column")
    return int(np.sum(matching >= 0))


def _scaling() -> ConditionResult:
    return ConditionResult(name="C1", description="factor scales fixed by the unit diagonal of Phi", passed=True)


def _zero_counts(pattern: PatternMatrix) -> ConditionResult:
    m = pattern.m
    counts = pattern.zero_mask.sum(axis=0)
    bad = [j for j in range(m) if counts[j] < m - 1]
    return ConditionResult(
        name="C2",
        description=f"each column has at least m - 1 = {m - 1} fixed zeros",
        passed=not bad,
        columns=[j + 1 for j in bad],
        details=[f"column {j + 1} has {int(counts[j])} fixed zeros" for j in bad],
    )


def _rank(pattern: PatternMatrix) -> ConditionResult:
    m = pattern.m
    zeros = pattern.zero_mask
    nonzero = (pattern.kinds != CellKind.ZERO)
    bad_columns, bad_rows, details = set(), set(), []
    for j in range(m):
        rows = np.flatnonzero(zeros[:, j])
        others = [k for k in range(m) if k != j]
        rank = structural_rank(nonzero[np.ix_(rows, others)])
        if rank < m - 1:
            bad_columns.add(j)
            bad_rows.update(rows.tolist())
            details.append(f"zero rows of column {j + 1} give structural rank {rank} < {m - 1}")
    # at the minimal zero count two columns may not share the same zero rows
    counts = zeros.sum(axis=0)
    for j in range(m):
        for k in range(j + 1, m):
            if counts[j] == counts[k] == m - 1 and m > 1 and np.array_equal(zeros[:, j], zeros[:, k]):
                bad_columns.update((j, k))
                bad_rows.update(np.flatnonzero(zeros[:, j]).tolist())
                details.append(f"columns {j + 1} and {k + 1} share the same zero rows")
    return ConditionResult(
        name="C3",
        description="zero rows of each column give structural rank m - 1 on the other columns, with distinct row sets",
        passed=not bad_columns,
        columns=sorted(c + 1 for c in bad_columns),
        rows=sorted(r + 1 for r in bad_rows),
        details=details,
    )


def _anchors(pattern: PatternMatrix) -> ConditionResult:
    bad, rows, details = [], [], []
    for j, anchor_rows in enumerate(pattern.anchors()):
        if len(anchor_rows) != 1:
            bad.append(j + 1)
            rows.extend(r + 1 for r in anchor_rows)
            details.append(f"column {j + 1} has {len(anchor_rows)} anchors")
    return ConditionResult(
        name="C4",
        description="each column has exactly one positive anchor",
        passed=not bad,
        columns=bad,
        rows=sorted(rows),
        details=details,
    )


def ledermann_check(pattern: PatternMatrix) -> LedermannCheck:
    """Free parameters against the p(p+1)/2 distinct covariance moments."""
    p, m = pattern.shape
    free = pattern.n_free() + p + m * (m - 1) // 2
    moments = p * (p + 1) // 2
    return LedermannCheck(free_parameters=free, moments=moments, exceeded=free > moments)


def check_ucfm(pattern: PatternMatrix, m: Optional[int] = None) -> IdentificationReport:
    """
    Check whether a pattern with anchors identifies a unique oblique solution.
    Findings go in the report; nothing is raised for a failing pattern.
    """
    if m is not None and m != pattern.m:
        raise UsageError(f"pattern has {pattern.m} columns, expected {m}")
    conditions = [_scaling(), _zero_counts(pattern), _rank(pattern), _anchors(pattern)]
    ledermann = ledermann_check(pattern)
    warnings = []
    if ledermann.exceeded:
        warnings.append(f"{ledermann.free_parameters} free parameters exceed the {ledermann.moments} covariance moments")
        logging.warning(f"Ledermann bound exceeded: {warnings[-1]}")
    report = IdentificationReport(
        p=pattern.p,
        m=pattern.m,
        conditions=conditions,
        overall=all(c.passed for c in conditions),
        ledermann=ledermann,
        warnings=warnings,
    )
    logging.info(f"UCFM check: {'pass' if report.overall else 'fail on ' + ', '.join(report.failed)}")
    return report
