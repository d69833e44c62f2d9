"""Built-in bilevel problems."""
from .cleaning import (
    CleaningOracle,
    CleaningProblem,
    cleaning_oracle,
    detection_auc,
    gen_cleaning,
    load_cleaning_csv,
    save_cleaning_csv,
)
from .quadratic import (
    QuadraticBilevel,
    gen_quadratic,
    quadratic_exact_hypergrad,
    quadratic_inner_solve,
    sum_lr_to_mean,
)
from .sequences import DEFAULT_ALPHAS, SyntheticOmegaSeq, gen_omega_seq

__all__ = [
    "CleaningOracle",
    "CleaningProblem",
    "cleaning_oracle",
    "detection_auc",
    "gen_cleaning",
    "load_cleaning_csv",
    "save_cleaning_csv",
    "QuadraticBilevel",
    "gen_quadratic",
    "quadratic_exact_hypergrad",
    "quadratic_inner_solve",
    "sum_lr_to_mean",
    "DEFAULT_ALPHAS",
    "SyntheticOmegaSeq",
    "gen_omega_seq",
]
