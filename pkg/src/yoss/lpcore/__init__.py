"""LP solver and model-matching reduction."""

from .affine import AffineFir, FirVariable, VariableSpace
from .matching import (HorizonError, MatchingLP, MatchingProblem, MatchingSolution, NormConstraint,
                       mm_build, mm_solve)
from .simplex import LinearProgram, LPError, LPResult, lp_dump, lp_solve

__all__ = ["AffineFir", "FirVariable", "VariableSpace", "HorizonError", "MatchingLP",
           "MatchingProblem", "MatchingSolution", "NormConstraint", "mm_build", "mm_solve",
           "LinearProgram", "LPError", "LPResult", "lp_dump", "lp_solve"]
