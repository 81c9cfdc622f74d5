"""Quantitative protocol: Hausdorff and RMSD against generator ground truth,
aggregated per split, plus the with/without-discriminator ablation table."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from .data import DatasetManifest, build_template, generate_body
from .models import TransferPipeline


def rmsd(a: np.ndarray, b: np.ndarray) -> float:
    """Root of the mean squared per-vertex distance between corresponding vertices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vertex count mismatch: {a.shape} vs {b.shape}")
    sq = ((a - b) ** 2).sum(axis=-1)
    return float(np.sqrt(sq.mean()))


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two vertex point sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("point sets must be non-empty")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@dataclass(frozen=True)
class PairRecord:
    shape_id: int  # identity's shape (the transfer target cell)
    pose_id: int  # posed input's pose
    hausdorff: float
    rmsd: float


@dataclass(frozen=True)
class MetricReport:
    split: str
    hausdorff_mean: float
    rmsd_mean: float
    records: tuple

    @classmethod
    def from_records(cls, split: str, records) -> "MetricReport":
        records = tuple(records)
        if not records:
            raise ValueError(f"no pairs to evaluate in split {split!r}")
        return cls(
            split=split,
            hausdorff_mean=float(np.mean([r.hausdorff for r in records])),
            rmsd_mean=float(np.mean([r.rmsd for r in records])),
            records=records,
        )

    def summary(self) -> str:
        return (
            f"{self.split}: hausdorff_mean={self.hausdorff_mean:.6f} m, "
            f"rmsd_mean={self.rmsd_mean:.6f} m over {len(self.records)} pairs"
        )

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("split,shape_id,pose_id,hausdorff,rmsd\n")
            for r in self.records:
                fh.write(f"{self.split},{r.shape_id},{r.pose_id},{r.hausdorff!r},{r.rmsd!r}\n")


def evaluate_predictions(predict, manifest: DatasetManifest, split: str) -> MetricReport:
    """Score an arbitrary predictor over every ordered (posed, identity) cell
    pair in the split, self-pairs included.

    `predict(posed_mesh, identity_mesh)` returns predicted vertices in meters;
    ground truth is the generator's mesh for (identity shape, posed pose).
    """
    template = build_template(manifest.resolution)
    cells = manifest.cells(split)
    if not cells:
        raise ValueError(f"split {split!r} is empty")
    meshes = {(c.shape_id, c.pose_id): generate_body(template, c) for c in manifest.bodies}
    records = []
    for posed in cells:
        for identity in cells:
            gt_spec = manifest.cell(identity.shape_id, posed.pose_id)
            gt = meshes[(gt_spec.shape_id, gt_spec.pose_id)]
            predicted = predict(
                meshes[(posed.shape_id, posed.pose_id)],
                meshes[(identity.shape_id, identity.pose_id)],
            )
            records.append(
                PairRecord(
                    shape_id=identity.shape_id,
                    pose_id=posed.pose_id,
                    hausdorff=hausdorff(predicted, gt.vertices),
                    rmsd=rmsd(predicted, gt.vertices),
                )
            )
    return MetricReport.from_records(split, records)


def evaluate(pipeline, manifest: DatasetManifest, split: str, batch_size: int = 16) -> MetricReport:
    """Run the pipeline's transfer over every cell pairing in the split.

    Accepts a TransferPipeline or a checkpoint path.
    """
    if not isinstance(pipeline, TransferPipeline):
        pipeline, _ = TransferPipeline.load(pipeline)
    template = build_template(manifest.resolution)
    if template.num_vertices != pipeline.num_vertices:
        raise ValueError(
            f"checkpoint expects {pipeline.num_vertices} vertices but manifest "
            f"template has {template.num_vertices}"
        )
    cells = manifest.cells(split)
    if not cells:
        raise ValueError(f"split {split!r} is empty")

    coords = {}
    meshes = {}
    for c in manifest.bodies:
        mesh = generate_body(template, c)
        meshes[(c.shape_id, c.pose_id)] = mesh
        key = (c.shape_id, c.pose_id)
        normalized = manifest.normalization.normalize(mesh.vertices)
        coords[key] = torch.from_numpy(normalized.T.copy()).to(pipeline.dtype)

    pairs = [(p, i) for p in cells for i in cells]
    records = []
    with torch.no_grad():
        for lo in range(0, len(pairs), batch_size):
            chunk = pairs[lo : lo + batch_size]
            posed = torch.stack([coords[(p.shape_id, p.pose_id)] for p, _ in chunk])
            ident = torch.stack([coords[(i.shape_id, i.pose_id)] for _, i in chunk])
            out = pipeline.generator(posed, ident)
            for (p, i), pred in zip(chunk, out):
                predicted = pipeline.coords_to_vertices(pred)
                gt = meshes[(i.shape_id, p.pose_id)]
                records.append(
                    PairRecord(
                        shape_id=i.shape_id,
                        pose_id=p.pose_id,
                        hausdorff=hausdorff(predicted, gt.vertices),
                        rmsd=rmsd(predicted, gt.vertices),
                    )
                )
    return MetricReport.from_records(split, records)


def copy_input_baseline(manifest: DatasetManifest, split: str) -> MetricReport:
    """Score the do-nothing baseline that returns the posed input unchanged."""
    return evaluate_predictions(lambda posed, identity: posed.vertices, manifest, split)


@dataclass(frozen=True)
class AblationTable:
    """Hausdorff/RMSD grid: one row per split, one column pair per config."""

    labels: tuple
    splits: tuple
    values: dict  # (split, label) -> (hausdorff_mean, rmsd_mean)

    def to_csv(self) -> str:
        header = "split," + ",".join(f"{l}_hdff,{l}_rmse" for l in self.labels)
        lines = [header]
        for split in self.splits:
            cells = []
            for label in self.labels:
                h, r = self.values[(split, label)]
                cells.append(f"{h!r},{r!r}")
            lines.append(f"{split}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = 12
        cols = ["split".ljust(width)]
        for label in self.labels:
            cols.append(f"{label} HDFF(m)".rjust(width + 8))
            cols.append(f"{label} RMSE(m)".rjust(width + 8))
        lines = ["".join(cols)]
        for split in self.splits:
            row = [split.ljust(width)]
            for label in self.labels:
                h, r = self.values[(split, label)]
                row.append(f"{h:.6f}".rjust(width + 8))
                row.append(f"{r:.6f}".rjust(width + 8))
            lines.append("".join(row))
        return "\n".join(lines) + "\n"


def ablation_table(manifest: DatasetManifest, configs, out_dir) -> AblationTable:
    """Train one model per (label, config) and tabulate both splits.

    Checkpoints and logs land in out_dir/<label>/.
    """
    from .training import fit  # deferred to avoid an import cycle

    if len(configs) < 2:
        raise ValueError("ablation needs at least two configs")
    labels = tuple(label for label, _ in configs)
    splits = ("train", "validation")
    values = {}
    for label, config in configs:
        run_dir = os.path.join(out_dir, label)
        checkpoint = fit(manifest, config, run_dir)
        pipeline, _ = TransferPipeline.load(checkpoint)
        for split in splits:
            report = evaluate(pipeline, manifest, split)
            values[(split, label)] = (report.hausdorff_mean, report.rmsd_mean)
    return AblationTable(labels=labels, splits=splits, values=values)
