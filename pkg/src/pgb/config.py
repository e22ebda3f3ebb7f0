"""Pruning hyperparameters."""

from dataclasses import dataclass

from .errors import ValidationError

DEFAULT_TAU = 1e-5
DEFAULT_G_MAX = 6
DEFAULT_N_PERM = 6
DEFAULT_RIDGE = 0.0


@dataclass(frozen=True)
class PruneConfig:
    """Knobs of the one-shot grouped pruning pipeline.

    gamma: fraction of prunable parameters to keep, in (0, 1].
    tau: importance threshold that drives the adaptive group count.
    g_max: maximum number of diagonal groups per matrix.
    n_perm: number of (column, row) sorting passes in the permutation search.
    ridge: anchor strength of the weight-compensation solver; 0 means pure
        least squares with an automatic fallback on singular systems.
    """

    gamma: float
    tau: float = DEFAULT_TAU
    g_max: int = DEFAULT_G_MAX
    n_perm: int = DEFAULT_N_PERM
    ridge: float = DEFAULT_RIDGE

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.tau < 0.0:
            raise ValidationError(f"tau must be >= 0, got {self.tau}")
        if self.g_max < 1:
            raise ValidationError(f"g_max must be >= 1, got {self.g_max}")
        if self.n_perm < 1:
            raise ValidationError(f"n_perm must be >= 1, got {self.n_perm}")
        if self.ridge < 0.0:
            raise ValidationError(f"ridge must be >= 0, got {self.ridge}")

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "tau": self.tau,
            "g_max": self.g_max,
            "n_perm": self.n_perm,
            "ridge": self.ridge,
        }
