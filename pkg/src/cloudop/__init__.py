"""cloudop: frame-invariant region-to-point neural operators for a scalar
transport PDE, with synthetic data generation, invariance audits, and a
memory/time scaling harness."""

from .clouds import (
    Dataset,
    RegionOfInfluence,
    VectorCloud,
    build_dataset,
    influence_ellipse,
    load_dataset,
    save_dataset,
)
from .flow import (
    FlowField,
    StructuredGrid,
    TransportConfig,
    potential_flow_cylinder,
    rotate_frame,
    solve_transport,
    strain_magnitude,
)
from .gkn import GknConfig, GknParams, gkn_forward
from .nnet import AdamState, DenseLayer, Mlp, adam_step, param_count
from .training import (
    Model,
    Normalizer,
    TrainConfig,
    apply_normalizer,
    evaluate,
    fit_normalizer,
    invariance_audit,
    train,
)
from .vcnn import VcnnConfig, VcnnParams, vcnn_forward

__version__ = "0.1.0"
