##################
## Domain types for the normal linear factor model: observed data,
## loading patterns and points in parameter space.
##################

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from factor.errors import ModelError, UsageError

STANDARDIZED_MEAN_TOL = 1e-10
STANDARDIZED_VAR_TOL = 1e-8


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """
    An n x p matrix of observations with item labels.

    Ingestion (files.tables.load_dataset, generate_synthetic) enforces n >= 2;
    in-memory subsets such as training samples may be smaller.
    """
    values: np.ndarray
    item_names: Tuple[str, ...] = ()
    standardized: bool = False

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.ndim != 2:
            raise UsageError("data must be a two-dimensional matrix")
        if values.shape[1] < 1:
            raise UsageError("data must have at least one item column")
        if np.isnan(values).any():
            rows = sorted(set(np.argwhere(np.isnan(values))[:, 0].tolist()))
            raise UsageError(f"missing entries in observation rows {[r + 1 for r in rows[:5]]}")
        if not np.isfinite(values).all():
            raise UsageError("data contains non-finite entries")
        names = tuple(self.item_names) if self.item_names else tuple(f"y{j + 1}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise UsageError(f"{len(names)} item names for {values.shape[1]} columns")
        if self.standardized and values.shape[0] >= 2:
            means = values.mean(axis=0)
            variances = values.var(axis=0, ddof=1)
            if np.any(np.abs(means) >= STANDARDIZED_MEAN_TOL) or np.any(np.abs(variances - 1.0) >= STANDARDIZED_VAR_TOL):
                raise UsageError("dataset flagged standardized but columns are not mean 0 / variance 1")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "item_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, rows: Sequence[int]) -> "Dataset":
        """Rows in the given order; the result is never flagged standardized."""
        return Dataset(self.values[np.asarray(rows, dtype=int)], self.item_names, standardized=False)


class CellKind(IntEnum):
    FREE = 0
    ZERO = 1
    VALUE = 2
    ANCHOR = 3


@dataclass(frozen=True)
class PatternMatrix:
    """
    Per-cell status of a p x m loading matrix.

    `kinds` holds CellKind codes; `values` holds the fixed value of VALUE cells
    (and 0 elsewhere). ANCHOR cells are free cells restricted to be positive.
    """
    kinds: np.ndarray
    values: np.ndarray = None

    def __post_init__(self):
        kinds = np.asarray(self.kinds, dtype=np.int8)
        if kinds.ndim != 2:
            raise UsageError("pattern must be a p x m grid")
        values = np.zeros(kinds.shape) if self.values is None else np.asarray(self.values, dtype=float)
        if values.shape != kinds.shape:
            raise UsageError("pattern values must match the pattern shape")
        if not np.isin(kinds, [k.value for k in CellKind]).all():
            raise UsageError("unknown cell status in pattern")
        values = np.where(kinds == CellKind.VALUE, values, 0.0)
        # a fixed value of exactly zero is a fixed zero
        kinds = np.where((kinds == CellKind.VALUE) & (values == 0.0), CellKind.ZERO, kinds).astype(np.int8)
        kinds.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def all_free(cls, p: int, m: int) -> "PatternMatrix":
        return cls(np.full((p, m), CellKind.FREE))

    @classmethod
    def efa(cls, p: int, m: int) -> "PatternMatrix":
        """Exploratory pattern: every cell free, cell (j, j) a positive anchor."""
        if m > p:
            raise UsageError(f"cannot place {m} diagonal anchors in {p} items")
        kinds = np.full((p, m), CellKind.FREE)
        for j in range(m):
            kinds[j, j] = CellKind.ANCHOR
        return cls(kinds)

    @classmethod
    def fixed(cls, loadings: np.ndarray) -> "PatternMatrix":
        """Every cell fixed at the given loadings (used by reduced runs)."""
        loadings = np.asarray(loadings, dtype=float)
        return cls(np.full(loadings.shape, CellKind.VALUE), loadings)

    @property
    def p(self) -> int:
        return self.kinds.shape[0]

    @property
    def m(self) -> int:
        return self.kinds.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.kinds.shape

    @property
    def free_mask(self) -> np.ndarray:
        return (self.kinds == CellKind.FREE) | (self.kinds == CellKind.ANCHOR)

    @property
    def fixed_mask(self) -> np.ndarray:
        return ~self.free_mask

    @property
    def anchor_mask(self) -> np.ndarray:
        return self.kinds == CellKind.ANCHOR

    @property
    def zero_mask(self) -> np.ndarray:
        return self.kinds == CellKind.ZERO

    def anchors(self) -> List[List[int]]:
        """Row indices (0-based) of the anchor cells in each column."""
        return [np.flatnonzero(self.anchor_mask[:, j]).tolist() for j in range(self.m)]

    def n_free(self) -> int:
        return int(self.free_mask.sum())

    def fill(self, free_values: Optional[np.ndarray] = None) -> np.ndarray:
        """Loading matrix with fixed cells at their values and free cells from `free_values`."""
        out = np.array(self.values, copy=True)
        if free_values is not None:
            out[self.free_mask] = np.asarray(free_values, dtype=float)[self.free_mask]
        return out

    def admits(self, loadings: np.ndarray) -> bool:
        """True iff fixed cells hold exactly and anchors are strictly positive."""
        loadings = np.asarray(loadings, dtype=float)
        if loadings.shape != self.shape:
            return False
        fixed = self.fixed_mask
        if not np.array_equal(loadings[fixed], self.values[fixed]):
            return False
        return bool(np.all(loadings[self.anchor_mask] > 0))

    def same_as(self, other: "PatternMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.values, other.values)
        )

    def permute_rows(self, order: Sequence[int]) -> "PatternMatrix":
        order = np.asarray(order, dtype=int)
        return PatternMatrix(self.kinds[order], self.values[order])


@dataclass(frozen=True)
class FactorModel:
    """
    One point in parameter space: loadings (p x m), unique variances (p) and
    factor correlations (m x m).
    """
    loadings: np.ndarray
    unique_variances: np.ndarray
    factor_correlations: Optional[np.ndarray] = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        loadings = np.asarray(self.loadings, dtype=float)
        if loadings.ndim == 1:
            loadings = loadings.reshape(-1, 1)
        p, m = loadings.shape
        psi = np.asarray(self.unique_variances, dtype=float).reshape(-1)
        phi = np.eye(m) if self.factor_correlations is None else np.asarray(self.factor_correlations, dtype=float).reshape(m, m)
        if psi.shape != (p,):
            raise ModelError(f"expected {p} unique variances, got {psi.shape[0]}")
        if self.check:
            if not np.all(psi > 0):
                raise ModelError("unique variances must be strictly positive")
            if m > 0:
                if not np.allclose(phi, phi.T, atol=1e-12):
                    raise ModelError("factor correlations must be symmetric")
                if not np.allclose(np.diag(phi), 1.0, atol=1e-10):
                    raise ModelError("factor correlations must have a unit diagonal")
                if np.linalg.eigvalsh(phi).min() <= 0:
                    raise ModelError("factor correlations must be positive definite")
        object.__setattr__(self, "loadings", _frozen(loadings))
        object.__setattr__(self, "unique_variances", _frozen(psi))
        object.__setattr__(self, "factor_correlations", _frozen(phi))

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def m(self) -> int:
        return self.loadings.shape[1]

    def communalities(self) -> np.ndarray:
        """Row-wise lambda_i' Phi lambda_i."""
        return np.einsum("ij,jk,ik->i", self.loadings, self.factor_correlations, self.loadings)

    def standardized(self) -> "FactorModel":
        """The same model rescaled to unit implied item variances."""
        scale = 1.0 / np.sqrt(self.communalities() + self.unique_variances)
        return FactorModel(self.loadings * scale[:, None], self.unique_variances * scale**2, self.factor_correlations)


@dataclass(frozen=True)
class TrueModelSpec:
    """A generating model plus sample size and seed for synthetic data."""
    model: FactorModel
    n: int
    seed: int
    item_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.n < 2:
            raise UsageError("synthetic sample size must be at least 2")
        if self.seed < 0:
            raise UsageError("seed must be non-negative")
