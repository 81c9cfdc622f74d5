"""Training objectives: reconstruction, edge regularization, pose-distance, GAN terms.

Vertex tensors are shaped (..., 3, V); every loss returns a scalar tensor,
averaged over any leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch

PROB_CLAMP = 1e-7

EDGE_MODES = ("length", "literal")


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights balancing the generator objective's four terms."""

    adver: float = 0.1
    rec: float = 2.0
    edge: float = 0.5
    dist: float = 2.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


@dataclass(frozen=True)
class LossReport:
    """Named scalar values for one training step."""

    rec: float
    edge: float
    dist: float
    adver: float
    disc: float
    total: float

    CSV_FIELDS = ("rec", "edge", "dist", "adver", "disc", "total")

    @staticmethod
    def csv_header() -> str:
        return "step," + ",".join(LossReport.CSV_FIELDS)

    def csv_row(self, step: int) -> str:
        values = [getattr(self, f) for f in self.CSV_FIELDS]
        return f"{step}," + ",".join(repr(v) for v in values)


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x
    raise ValueError(f"expected (3, V) or (B, 3, V) vertices, got shape {tuple(x.shape)}")


def _check_counts(a: torch.Tensor, b: torch.Tensor):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"vertex count mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def loss_rec(generated: torch.Tensor, target: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """Squared L2 distance between corresponding vertices.

    reduction "sum" adds the per-vertex squared distances; "mean" divides
    by the vertex count so the value is resolution-stable.
    """
    _check_counts(generated, target)
    g, t = _as_batch(generated), _as_batch(target)
    sq = ((g - t) ** 2).sum(dim=-2)
    if reduction == "sum":
        per_mesh = sq.sum(dim=-1)
    elif reduction == "mean":
        per_mesh = sq.mean(dim=-1)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    return per_mesh.mean()


def _edge_tensor(edges, device) -> torch.Tensor:
    if isinstance(edges, np.ndarray):
        edges = torch.from_numpy(np.ascontiguousarray(edges))
    return edges.to(device=device, dtype=torch.long)


def loss_edge(
    generated: torch.Tensor,
    reference: torch.Tensor,
    edges,
    mode: str = "length",
) -> torch.Tensor:
    """Edge regularizer tying the generated surface to the reference's edge lengths.

    mode "length": sum over undirected edges of the squared difference of edge
    lengths between generated and reference. mode "literal": sum over directed
    one-ring pairs of ||g_i - r_j||^2, so each undirected edge is counted from
    both endpoints and positions (not just lengths) are penalized.
    """
    if mode not in EDGE_MODES:
        raise ValueError(f"unknown edge mode {mode!r}; expected one of {EDGE_MODES}")
    _check_counts(generated, reference)
    g, r = _as_batch(generated), _as_batch(reference)
    e = _edge_tensor(edges, g.device)
    ga, gb = g[..., e[:, 0]], g[..., e[:, 1]]
    ra, rb = r[..., e[:, 0]], r[..., e[:, 1]]
    if mode == "length":
        glen = torch.linalg.vector_norm(ga - gb, dim=-2)
        rlen = torch.linalg.vector_norm(ra - rb, dim=-2)
        per_mesh = ((glen - rlen) ** 2).sum(dim=-1)
    else:
        fwd = ((ga - rb) ** 2).sum(dim=-2)
        bwd = ((gb - ra) ** 2).sum(dim=-2)
        per_mesh = (fwd + bwd).sum(dim=-1)
    return per_mesh.mean()


def _pairwise_distances(x: torch.Tensor) -> torch.Tensor:
    pts = x.transpose(-1, -2)
    return torch.cdist(pts, pts, compute_mode="donot_use_mm_for_euclid_dist")


def loss_dist(generated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Pose loss on dense vertex-distance matrices.

    Mean over the strict upper triangle of the squared difference between the
    two distance matrices; rigid-motion invariant in either argument.
    """
    _check_counts(generated, target)
    g, t = _as_batch(generated), _as_batch(target)
    nv = g.shape[-1]
    if nv < 2:
        raise ValueError("loss_dist needs at least 2 vertices")
    iu = torch.triu_indices(nv, nv, offset=1, device=g.device)
    dg = _pairwise_distances(g)[..., iu[0], iu[1]]
    dt = _pairwise_distances(t)[..., iu[0], iu[1]]
    n = nv * (nv - 1) // 2
    per_mesh = ((dt - dg) ** 2).sum(dim=-1) / n
    return per_mesh.mean()


def _check_probs(p: torch.Tensor, name: str) -> torch.Tensor:
    p = torch.as_tensor(p)
    if p.numel() == 0:
        raise ValueError(f"{name} is empty")
    if bool((p < 0).any()) or bool((p > 1).any()):
        raise ValueError(f"{name} contains values outside [0, 1]")
    return torch.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def loss_discriminator(p_real: torch.Tensor, p_fake: torch.Tensor) -> torch.Tensor:
    """Negated discriminator objective: -mean(log p_real) - mean(log(1 - p_fake)).

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    pr = _check_probs(p_real, "p_real")
    pf = _check_probs(p_fake, "p_fake")
    return -torch.log(pr).mean() - torch.log1p(-pf).mean()


def loss_adversarial(p_fake: torch.Tensor, non_saturating: bool = False) -> torch.Tensor:
    """Generator term: mean(log(1 - p_fake)), to be minimized.

    The non-saturating variant (-mean log p_fake) is available behind the flag
    but is not the default.
    """
    pf = _check_probs(p_fake, "p_fake")
    if non_saturating:
        return -torch.log(pf).mean()
    return torch.log1p(-pf).mean()


def loss_total(
    rec: float,
    edge: float,
    dist: float,
    adver: float,
    disc: float = 0.0,
    weights: LossWeights = LossWeights(),
) -> LossReport:
    """Assemble a LossReport whose total is the weighted generator objective."""
    components = {"rec": rec, "edge": edge, "dist": dist, "adver": adver, "disc": disc}
    for name, value in components.items():
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"non-finite loss component {name}: {value}")
        components[name] = value
    total = (
        weights.adver * components["adver"]
        + weights.rec * components["rec"]
        + weights.edge * components["edge"]
        + weights.dist * components["dist"]
    )
    return LossReport(total=total, **components)
