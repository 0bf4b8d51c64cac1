from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Tuple, Union

import numpy as np

DEFAULT_APPROX_DELTA = 0.1


@dataclass(frozen=True)
class CellRef:
    """1-based reference to loading lambda_ij."""
    i: int
    j: int


@dataclass(frozen=True)
class Literal:
    value: float


@dataclass(frozen=True)
class Cell:
    ref: CellRef


@dataclass(frozen=True)
class Neg:
    term: "Term"


@dataclass(frozen=True)
class Abs:
    term: "Term"


Term = Union[Literal, Cell, Neg, Abs]


class RelOp(str, Enum):
    LT = "<"
    GT = ">"
    EQ = "="
    APPROX = "~="


@dataclass(frozen=True)
class Relation:
    lhs: Term
    op: RelOp
    rhs: Term
    delta: Optional[float] = None
    line: int = 0

    def same_as(self, other: "Relation") -> bool:
        """Structural equality ignoring source positions."""
        return (self.lhs, self.op, self.rhs, self.delta) == (other.lhs, other.op, other.rhs, other.delta)


@dataclass(frozen=True)
class ConstraintSystem:
    model_name: str
    relations: Tuple[Relation, ...]
    source_text: str = ""

    def same_as(self, other: "ConstraintSystem") -> bool:
        return (
            self.model_name == other.model_name
            and len(self.relations) == len(other.relations)
            and all(a.same_as(b) for a, b in zip(self.relations, other.relations))
        )


def is_literal(term: Term) -> bool:
    return isinstance(term, Literal)


def cells_of(term: Term) -> Iterator[CellRef]:
    if isinstance(term, Cell):
        yield term.ref
    elif isinstance(term, (Neg, Abs)):
        yield from cells_of(term.term)


def depth(term: Term) -> int:
    """Number of Neg/Abs wrappers around the atom."""
    if isinstance(term, (Neg, Abs)):
        return 1 + depth(term.term)
    return 0


def term_values(term: Term, loadings: np.ndarray) -> np.ndarray:
    """Evaluate a term on a stack of loading matrices (... x p x m)."""
    if isinstance(term, Literal):
        return np.full(loadings.shape[:-2], term.value)
    if isinstance(term, Cell):
        return loadings[..., term.ref.i - 1, term.ref.j - 1]
    if isinstance(term, Neg):
        return -term_values(term.term, loadings)
    return np.abs(term_values(term.term, loadings))


def relation_margin(relation: Relation, loadings: np.ndarray) -> np.ndarray:
    """Signed margin of a relation; positive iff it holds strictly."""
    lhs = term_values(relation.lhs, loadings)
    rhs = term_values(relation.rhs, loadings)
    if relation.op == RelOp.LT:
        return rhs - lhs
    if relation.op == RelOp.GT:
        return lhs - rhs
    if relation.op == RelOp.APPROX:
        return relation.delta - np.abs(lhs - rhs)
    # equalities are structural; they never restrict mass
    return np.full(np.shape(lhs), np.inf)
