"""Spectrum-moment analysis and Monte-Carlo verification of network Jacobians."""
from .errors import (
    BudgetError,
    ConvergenceError,
    DimensionError,
    IsometryError,
    PrerequisiteViolation,
    SpecError,
)
from .moments import (
    KINDS,
    SMN,
    Conv2D,
    DataNorm,
    DenseGaussian,
    Identity,
    Invariance,
    LeakyReLU,
    Moments,
    Orthogonal,
    ReLU,
    SeLU,
    SPReLU,
    StructureFlags,
    Tanh,
    component_moments,
    selu_moments,
    structure_flags,
)
from .kernel import ConvGeometry, brute_force_kernel_oracle, effective_kernel_size
from .graph import (
    CompositionResult,
    NetworkGraph,
    Parallel,
    Serial,
    Verdict,
    analyze_graph,
    compose_parallel,
    compose_serial,
    densenet_block,
    grad_norm_profile,
)
from .gains import closed_form_gain, fixup_scale, selu_solve
from .flow import classify_normalization, propagate_alpha2, resnet_alpha2_profile
from .mc import TrialConfig, empirical_moments, sweep, verify_addition, verify_multiplication
from .smn_cost import compare_costs, normalization_op_count

__version__ = "0.1.0"

__all__ = [
    "BudgetError", "ConvergenceError", "DimensionError", "IsometryError", "PrerequisiteViolation", "SpecError",
    "KINDS", "SMN", "Conv2D", "DataNorm", "DenseGaussian", "Identity", "Invariance", "LeakyReLU", "Moments",
    "Orthogonal", "ReLU", "SeLU", "SPReLU", "StructureFlags", "Tanh",
    "component_moments", "selu_moments", "structure_flags",
    "ConvGeometry", "brute_force_kernel_oracle", "effective_kernel_size",
    "CompositionResult", "NetworkGraph", "Parallel", "Serial", "Verdict", "analyze_graph",
    "compose_parallel", "compose_serial", "densenet_block", "grad_norm_profile",
    "closed_form_gain", "fixup_scale", "selu_solve",
    "classify_normalization", "propagate_alpha2", "resnet_alpha2_profile",
    "TrialConfig", "empirical_moments", "sweep", "verify_addition", "verify_multiplication",
    "compare_costs", "normalization_op_count",
]
