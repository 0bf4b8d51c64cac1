from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from factor.model import FactorModel, TrueModelSpec


class FactorModelRecord(BaseModel):
    """JSON form of a FactorModel."""
    model_config = ConfigDict(extra="forbid")

    loadings: List[List[float]] = Field(..., description="p x m loading matrix, one list per item.")
    unique_variances: List[float] = Field(..., description="Diagonal of Psi.")
    factor_correlations: Optional[List[List[float]]] = Field(None, description="m x m correlation matrix; identity when omitted.")

    @classmethod
    def from_model(cls, model: FactorModel) -> "FactorModelRecord":
        return cls(
            loadings=model.loadings.tolist(),
            unique_variances=model.unique_variances.tolist(),
            factor_correlations=model.factor_correlations.tolist(),
        )

    def to_model(self) -> FactorModel:
        p = len(self.unique_variances)
        loadings = np.array(self.loadings, dtype=float)
        if loadings.ndim != 2:
            loadings = np.zeros((p, 0))
        return FactorModel(loadings, np.array(self.unique_variances, dtype=float), self.factor_correlations)


class TrueModelRecord(BaseModel):
    """JSON form of a TrueModelSpec, as read by the simulate command."""
    model_config = ConfigDict(extra="forbid")

    model: FactorModelRecord
    n: int = Field(..., ge=2, description="Number of observations to generate.")
    seed: int = Field(20250101, ge=0, description="Generator seed.")
    item_names: Optional[List[str]] = Field(None, description="Column labels; y1..yp when omitted.")

    def to_spec(self) -> TrueModelSpec:
        return TrueModelSpec(self.model.to_model(), self.n, self.seed, tuple(self.item_names or ()))
