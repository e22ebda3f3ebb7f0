"""pgb: compress weight matrices into permuted diagonal groups and run them cheaply.

The pipeline scores every weight, permutes rows and columns so important
weights cluster into diagonal blocks, prunes everything else, and serves
the result through a grouped linear operator costing 1/G of the dense
product. See the README for the CLI and archive format.
"""

from .archive import TensorArchive, load_archive, save_archive
from .compress import (
    compensate_model,
    model_importances,
    model_reconstruction_error,
    pgb_compress,
    reconstruction_error,
    weight_compensation,
)
from .config import PruneConfig
from .errors import (
    ArchiveError,
    BudgetError,
    PgbError,
    ShapeError,
    ValidationError,
)
from .grouping import (
    GroupedMatrix,
    MaskedMatrix,
    determine_group_count,
    grouped_weight_pruning,
    param_count,
    random_grouping,
    repermute_dense,
)
from .importance import (
    ffn_layer_score,
    importance_empirical_fisher,
    importance_magnitude_sq,
    region_importance,
)
from .infer import (
    discrepancy,
    encoder_forward,
    ffn_forward,
    layerwise_discrepancy,
    linear_macs,
    mha_forward,
    pgb_linear,
)
from .model import (
    LayerWeights,
    ModelSpec,
    PrunedLayer,
    PrunedModel,
    model_flops,
    model_param_count,
    synthetic_activations,
    synthetic_model,
)
from .permute import (
    PermutationPlan,
    alternating_sort,
    bruteforce_block_selection,
    compose_residual_permutation,
)
from .tensor import (
    apply_permutation,
    inverse_permutation,
    matmul,
)

__version__ = "0.1.0"

__all__ = [
    "ArchiveError",
    "BudgetError",
    "GroupedMatrix",
    "LayerWeights",
    "MaskedMatrix",
    "ModelSpec",
    "PermutationPlan",
    "PgbError",
    "PruneConfig",
    "PrunedLayer",
    "PrunedModel",
    "ShapeError",
    "TensorArchive",
    "ValidationError",
    "alternating_sort",
    "apply_permutation",
    "bruteforce_block_selection",
    "compensate_model",
    "compose_residual_permutation",
    "determine_group_count",
    "discrepancy",
    "encoder_forward",
    "ffn_forward",
    "ffn_layer_score",
    "grouped_weight_pruning",
    "importance_empirical_fisher",
    "importance_magnitude_sq",
    "inverse_permutation",
    "layerwise_discrepancy",
    "linear_macs",
    "load_archive",
    "matmul",
    "mha_forward",
    "model_flops",
    "model_importances",
    "model_param_count",
    "model_reconstruction_error",
    "param_count",
    "pgb_compress",
    "pgb_linear",
    "random_grouping",
    "reconstruction_error",
    "region_importance",
    "repermute_dense",
    "save_archive",
    "synthetic_activations",
    "synthetic_model",
    "weight_compensation",
]
