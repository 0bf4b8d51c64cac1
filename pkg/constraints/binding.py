##################
## Attach a parsed constraint system to a base pattern: validate indices,
## route equalities to the pattern, keep the mass relations for evaluation.
##################

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from constraints.ast import (ConstraintSystem, Literal, RelOp, Relation, cells_of, depth, is_literal,
                             relation_margin, term_values)
from factor.errors import BindError, UsageError
from factor.model import CellKind, PatternMatrix

MAX_TERM_DEPTH = 2
EQUALITY_TOL = 1e-12


@dataclass(frozen=True)
class BoundSystem:
    system: ConstraintSystem
    pattern: PatternMatrix
    mass_relations: Tuple[Relation, ...]
    equalities: Tuple[Relation, ...]
    source: Optional[str] = None

    @property
    def name(self) -> str:
        return self.system.model_name

    @property
    def is_homogeneous(self) -> bool:
        """True when no mass relation involves a nonzero number."""
        for rel in self.mass_relations:
            for side in (rel.lhs, rel.rhs):
                if isinstance(side, Literal) and side.value != 0:
                    return False
            if rel.op == RelOp.APPROX:
                return False
        return True

    def refines(self, other: "BoundSystem") -> bool:
        """Every mass relation of `other` is also a relation of this system."""
        return all(any(r.same_as(o) for r in self.mass_relations) for o in other.mass_relations)


def _check_equality(rel: Relation, pattern: PatternMatrix, source: Optional[str]):
    side, literal = (rel.rhs, rel.lhs) if is_literal(rel.lhs) else (rel.lhs, rel.rhs)
    for ref in cells_of(side):
        kind = pattern.kinds[ref.i - 1, ref.j - 1]
        if kind in (CellKind.FREE, CellKind.ANCHOR):
            raise BindError("equality constraints must be part of the base UCFM pattern", rel.line, source)
    fixed = pattern.fill()[None]
    if abs(float(term_values(side, fixed)[0]) - literal.value) > EQUALITY_TOL:
        raise BindError("equality contradicts the value fixed in the base pattern", rel.line, source)


def bind(system: ConstraintSystem, pattern: PatternMatrix, source: Optional[str] = None) -> BoundSystem:
    """
    Validate a constraint system against a base pattern.

    Raises:
        BindError: out-of-range cells, over-nested terms, or equalities on
            cells the pattern leaves free.
    """
    p, m = pattern.shape
    mass, equalities = [], []
    for rel in system.relations:
        for side in (rel.lhs, rel.rhs):
            if depth(side) > MAX_TERM_DEPTH:
                raise BindError("terms nest at most two of '-' and '|.|'", rel.line, source)
            for ref in cells_of(side):
                if not (1 <= ref.i <= p and 1 <= ref.j <= m):
                    raise BindError(f"L[{ref.i},{ref.j}] is outside the {p}x{m} pattern", rel.line, source)
        if rel.op == RelOp.EQ:
            _check_equality(rel, pattern, source)
            equalities.append(rel)
        else:
            mass.append(rel)
    return BoundSystem(system, pattern, tuple(mass), tuple(equalities), source)


def _as_stack(bound: BoundSystem, loadings: np.ndarray) -> np.ndarray:
    loadings = np.asarray(loadings, dtype=float)
    if loadings.shape[-2:] != bound.pattern.shape:
        raise UsageError(f"loadings of shape {loadings.shape[-2:]} do not match the {bound.pattern.shape} pattern")
    return loadings


def margins(bound: BoundSystem, draws: np.ndarray) -> np.ndarray:
    """Per-draw, per-relation signed margins (G x R)."""
    draws = _as_stack(bound, draws)
    if not bound.mass_relations:
        return np.full((draws.shape[0], 0), np.inf)
    return np.stack([relation_margin(r, draws) for r in bound.mass_relations], axis=-1)


def evaluate_many(bound: BoundSystem, draws: np.ndarray) -> np.ndarray:
    """Satisfaction indicator of every draw in a G x p x m stack."""
    return np.all(margins(bound, draws) > 0, axis=-1)


def evaluate(bound: BoundSystem, loadings: np.ndarray) -> bool:
    """True iff every mass relation holds strictly; exact ties are false."""
    return bool(evaluate_many(bound, _as_stack(bound, loadings)[None])[0])


def slack(bound: BoundSystem, loadings: np.ndarray) -> float:
    """Smallest margin over the relations; positive iff the system is satisfied."""
    values = margins(bound, _as_stack(bound, loadings)[None])[0]
    return float(values.min()) if values.size else np.inf
