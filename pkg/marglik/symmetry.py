##################
## Column sign/permutation symmetries of a loading pattern and
## alignment of draws to a reference solution.
##################

import itertools
from dataclasses import dataclass
from math import factorial
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from factor.model import CellKind, PatternMatrix


@dataclass(frozen=True)
class SignedPermutation:
    """Lambda -> Lambda' with column j of Lambda' equal to signs[j] * column perm[j] of Lambda."""
    perm: Tuple[int, ...]
    signs: Tuple[float, ...]

    def apply(self, loadings: np.ndarray) -> np.ndarray:
        return loadings[..., list(self.perm)] * np.asarray(self.signs)

    def apply_phi(self, phi: np.ndarray) -> np.ndarray:
        idx = list(self.perm)
        s = np.asarray(self.signs)
        return phi[..., idx, :][..., :, idx] * s[:, None] * s[None, :]

    @property
    def is_identity(self) -> bool:
        return self.perm == tuple(range(len(self.perm))) and all(s > 0 for s in self.signs)


def group_size(m: int) -> int:
    return (2**m) * factorial(m)


def signed_permutations(m: int) -> List[SignedPermutation]:
    """All 2^m m! signed permutations, identity first."""
    out = []
    for perm in itertools.permutations(range(m)):
        for signs in itertools.product((1.0, -1.0), repeat=m):
            out.append(SignedPermutation(tuple(perm), tuple(signs)))
    return out


def _cell_class(kinds: np.ndarray) -> np.ndarray:
    # anchors are free cells for symmetry purposes
    return np.where(kinds == CellKind.ANCHOR, CellKind.FREE, kinds)


def pattern_symmetries(pattern: PatternMatrix) -> List[SignedPermutation]:
    """Signed permutations mapping the pattern's fixed structure onto itself."""
    classes = _cell_class(pattern.kinds)
    out = []
    for g in signed_permutations(pattern.m):
        idx = list(g.perm)
        if not np.array_equal(classes[:, idx], classes):
            continue
        if not np.array_equal(pattern.values[:, idx] * np.asarray(g.signs), pattern.values):
            continue
        out.append(g)
    return out


def is_full_group(symmetries: List[SignedPermutation], m: int) -> bool:
    return len(symmetries) == group_size(m)


def align_to_reference(loadings: np.ndarray, reference: np.ndarray,
                       symmetries: List[SignedPermutation] = None) -> SignedPermutation:
    """
    The symmetry minimising |g(loadings) - reference|_F. With the full group
    the problem separates into a signed assignment problem.
    """
    m = reference.shape[1]
    if m == 0:
        return SignedPermutation((), ())
    if symmetries is None or is_full_group(symmetries, m):
        plus = ((loadings[:, :, None] - reference[:, None, :]) ** 2).sum(axis=0)
        minus = ((-loadings[:, :, None] - reference[:, None, :]) ** 2).sum(axis=0)
        cost = np.minimum(plus, minus)
        rows, cols = linear_sum_assignment(cost)
        perm = [0] * m
        signs = [1.0] * m
        for source, target in zip(rows, cols):
            perm[target] = int(source)
            signs[target] = 1.0 if plus[source, target] <= minus[source, target] else -1.0
        return SignedPermutation(tuple(perm), tuple(signs))
    best, best_cost = symmetries[0], np.inf
    for g in symmetries:
        cost = float(np.sum((g.apply(loadings) - reference) ** 2))
        if cost < best_cost:
            best, best_cost = g, cost
    return best


def align_draws(loadings: np.ndarray, reference: np.ndarray, symmetries: List[SignedPermutation] = None,
                phi: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """Align every draw of a G x p x m stack (and its Phi stack) to `reference`."""
    aligned = np.empty_like(loadings)
    aligned_phi = None if phi is None else np.empty_like(phi)
    for g in range(loadings.shape[0]):
        s = align_to_reference(loadings[g], reference, symmetries)
        aligned[g] = s.apply(loadings[g])
        if phi is not None:
            aligned_phi[g] = s.apply_phi(phi[g])
    return aligned, aligned_phi
