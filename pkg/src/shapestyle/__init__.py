"""Body-shape style transfer for fixed-template 3D human meshes."""

__version__ = "0.1.0"

from .blocks import StyleStats, ada_in, instance_norm, pointwise_linear, style_stats
from .data import (
    BodySpec,
    DatasetManifest,
    HumanoidTemplate,
    Normalization,
    build_template,
    generate_body,
    make_manifest,
    sample_pair,
)
from .evaluation import MetricReport, evaluate, hausdorff, rmsd
from .losses import (
    LossReport,
    LossWeights,
    loss_adversarial,
    loss_discriminator,
    loss_dist,
    loss_edge,
    loss_rec,
    loss_total,
)
from .mesh import Mesh, distance_matrix, edge_set, load_mesh, save_mesh
from .models import Discriminator, Generator, TransferPipeline
from .training import TrainConfig, fit, train_step

__all__ = [
    "BodySpec",
    "DatasetManifest",
    "Discriminator",
    "Generator",
    "HumanoidTemplate",
    "LossReport",
    "LossWeights",
    "Mesh",
    "MetricReport",
    "Normalization",
    "StyleStats",
    "TrainConfig",
    "TransferPipeline",
    "ada_in",
    "build_template",
    "distance_matrix",
    "edge_set",
    "evaluate",
    "fit",
    "generate_body",
    "hausdorff",
    "instance_norm",
    "load_mesh",
    "loss_adversarial",
    "loss_discriminator",
    "loss_dist",
    "loss_edge",
    "loss_rec",
    "loss_total",
    "make_manifest",
    "pointwise_linear",
    "rmsd",
    "sample_pair",
    "save_mesh",
    "style_stats",
    "train_step",
]
