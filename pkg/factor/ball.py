##################
## Geometry of the communality ball {lambda : lambda' Phi lambda <= 1}
## restricted to the free cells of one loading row.
##################

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from factor.errors import ModelError


def uniform_unit_ball(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """n points uniform in the unit ball of R^dim (normal directions, radius U^(1/dim))."""
    if dim == 0:
        return np.zeros((n, 0))
    directions = rng.standard_normal((n, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.random(n) ** (1.0 / dim)
    return directions * radii[:, None]


def log_unit_ball_volume(dim: int) -> float:
    return float(0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1.0))


@dataclass(frozen=True)
class RowBall:
    """
    The free-cell section of the ball for one row: an ellipsoid
    {x : (x - center)' A (x - center) <= radius^2}, A = Phi restricted to free cells.
    """
    free: np.ndarray
    center: np.ndarray
    radius: float
    shape_chol: np.ndarray

    @classmethod
    def for_row(cls, free: np.ndarray, fixed_values: np.ndarray, phi: np.ndarray) -> "RowBall":
        """
        `free` is the boolean free mask of the row, `fixed_values` the full row
        with fixed cells at their values.
        """
        free = np.asarray(free, dtype=bool)
        fixed = ~free
        c = np.asarray(fixed_values, dtype=float)[fixed]
        a = phi[np.ix_(free, free)]
        b = phi[np.ix_(free, fixed)] @ c
        cc = float(c @ phi[np.ix_(fixed, fixed)] @ c)
        if free.sum() == 0:
            if cc > 1.0:
                raise ModelError("fixed loadings of a row lie outside the communality ball")
            return cls(free, np.zeros(0), 0.0, np.zeros((0, 0)))
        center = -np.linalg.solve(a, b)
        r2 = 1.0 - cc + float(b @ -center)
        if r2 <= 0:
            raise ModelError("fixed loadings of a row leave no room inside the communality ball")
        return cls(free, center, float(np.sqrt(r2)), np.linalg.cholesky(a))

    @property
    def dim(self) -> int:
        return int(self.free.sum())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n free-cell vectors uniform on the ellipsoid."""
        u = uniform_unit_ball(rng, n, self.dim)
        if self.dim == 0:
            return u
        # x = center + r L^{-T} u maps the unit ball onto the ellipsoid
        return self.center + self.radius * np.linalg.solve(self.shape_chol.T, u.T).T

    def contains(self, x: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(x) - self.center
        z = d @ self.shape_chol
        return np.sum(z**2, axis=1) <= self.radius**2

    def log_volume(self) -> float:
        if self.dim == 0:
            return 0.0
        return (
            log_unit_ball_volume(self.dim)
            + self.dim * np.log(self.radius)
            - float(np.sum(np.log(np.diag(self.shape_chol))))
        )


def row_quadratic(loadings: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """lambda_i' Phi lambda_i for every row (or stack of matrices)."""
    return np.einsum("...ij,jk,...ik->...i", loadings, phi, loadings)
