"""End-to-end optimization: alternating discriminator/generator updates with
deterministic sampling, checkpointing, and loss/metric logging."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import DatasetManifest, build_template, generate_body, sample_pair_specs
from .losses import (
    EDGE_MODES,
    LossReport,
    LossWeights,
    loss_adversarial,
    loss_dist,
    loss_discriminator,
    loss_edge,
    loss_rec,
    loss_total,
)
from .mesh import edge_set
from .models import TransferPipeline


class NonFiniteLossError(RuntimeError):
    """A loss component left the reals; training aborted with a snapshot."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    generator_lr: float = 1e-4
    discriminator_lr: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 500
    edge_mode: str = "length"
    rec_reduction: str = "sum"
    use_discriminator: bool = True
    non_saturating: bool = False
    dtype: str = "float32"
    num_threads: int | None = None

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValueError("steps and batch_size must be positive")
        if self.generator_lr <= 0 or self.discriminator_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.edge_mode not in EDGE_MODES:
            raise ValueError(f"edge_mode must be one of {EDGE_MODES}")
        if self.rec_reduction not in ("sum", "mean"):
            raise ValueError("rec_reduction must be 'sum' or 'mean'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class CellBank:
    """Normalized coordinate tensors for every grid cell, built once."""

    def __init__(self, manifest: DatasetManifest, dtype: torch.dtype):
        self.manifest = manifest
        template = build_template(manifest.resolution)
        self.template = template
        self.edges = edge_set(template.mesh)
        self.coords = {}
        for spec in manifest.bodies:
            mesh = generate_body(template, spec)
            normalized = manifest.normalization.normalize(mesh.vertices)
            self.coords[(spec.shape_id, spec.pose_id)] = (
                torch.from_numpy(normalized.T.copy()).to(dtype)
            )

    def batch(self, rng: np.random.Generator, batch_size: int) -> dict:
        posed, identity, target = [], [], []
        for _ in range(batch_size):
            p, i, t = sample_pair_specs(self.manifest, rng)
            posed.append(self.coords[(p.shape_id, p.pose_id)])
            identity.append(self.coords[(i.shape_id, i.pose_id)])
            target.append(self.coords[(t.shape_id, t.pose_id)])
        return {
            "posed": torch.stack(posed),
            "identity": torch.stack(identity),
            "target": torch.stack(target),
        }


def make_optimizers(pipeline: TransferPipeline, config: TrainConfig):
    gen_opt = torch.optim.Adam(pipeline.generator.parameters(), lr=config.generator_lr)
    disc_opt = torch.optim.Adam(
        pipeline.discriminator.parameters(), lr=config.discriminator_lr
    )
    return gen_opt, disc_opt


def discriminator_step(pipeline, disc_opt, batch, config, fake=None) -> float:
    """One update of the discriminator on real targets vs detached fakes."""
    disc_opt.zero_grad(set_to_none=True)
    if fake is None:
        with torch.no_grad():
            fake = pipeline.generator(batch["posed"], batch["identity"])
    p_real = pipeline.discriminator(batch["target"])
    p_fake = pipeline.discriminator(fake.detach())
    disc = loss_discriminator(p_real, p_fake)
    disc.backward()
    disc_opt.step()
    return float(disc.detach())


def generator_step(pipeline, gen_opt, batch, edges, config, out=None) -> tuple:
    """One update of encoder + style encoder + decoder on the weighted total.

    Gradients flow only into generator parameters here; any discriminator
    gradients from the adversarial term are zeroed at its next update.
    """
    gen_opt.zero_grad(set_to_none=True)
    if out is None:
        out = pipeline.generator(batch["posed"], batch["identity"])
    rec = loss_rec(out, batch["target"], reduction=config.rec_reduction)
    edge = loss_edge(out, batch["identity"], edges, mode=config.edge_mode)
    dist = loss_dist(out, batch["target"])
    w = config.weights
    if config.use_discriminator:
        adver = loss_adversarial(
            pipeline.discriminator(out), non_saturating=config.non_saturating
        )
        total = w.adver * adver + w.rec * rec + w.edge * edge + w.dist * dist
        adver_value = float(adver.detach())
    else:
        total = w.rec * rec + w.edge * edge + w.dist * dist
        adver_value = 0.0
    total.backward()
    gen_opt.step()
    return float(rec.detach()), float(edge.detach()), float(dist.detach()), adver_value


def train_step(pipeline, optimizers, batch, edges, config) -> LossReport:
    """Discriminator update followed by a generator update; returns all scalars.

    The generator forward pass is shared between the two phases: the
    discriminator sees it detached, the generator backpropagates through it
    against the already-updated discriminator.
    """
    gen_opt, disc_opt = optimizers
    out = pipeline.generator(batch["posed"], batch["identity"])
    disc_value = (
        discriminator_step(pipeline, disc_opt, batch, config, fake=out)
        if config.use_discriminator
        else 0.0
    )
    rec, edge, dist, adver = generator_step(pipeline, gen_opt, batch, edges, config, out=out)
    for name, value in (("rec", rec), ("edge", edge), ("dist", dist),
                        ("adver", adver), ("disc", disc_value)):
        if not np.isfinite(value):
            raise NonFiniteLossError(f"loss component {name} is non-finite ({value})")
    return loss_total(rec=rec, edge=edge, dist=dist, adver=adver, disc=disc_value,
                      weights=config.weights)


def fit(
    manifest: DatasetManifest,
    config: TrainConfig,
    out_dir,
    resume_from=None,
    log=print,
) -> str:
    """Run the training loop; returns the path of the final checkpoint.

    Writes loss_log.csv (one row per executed step), eval_log.csv, periodic
    checkpoints, and checkpoint.pt (final, resumable). Same-seed runs produce
    bitwise-identical logs; resuming reproduces the uninterrupted stream.
    """
    from . import evaluation  # deferred: evaluation.ablation_table uses fit

    if config.num_threads:
        torch.set_num_threads(config.num_threads)
    os.makedirs(out_dir, exist_ok=True)
    dtype = getattr(torch, config.dtype)

    if resume_from is not None:
        pipeline, train_state = TransferPipeline.load(resume_from)
        if train_state is None:
            raise ValueError(f"{resume_from} has no training state to resume from")
        start_step = train_state["step"]
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = json.loads(train_state["numpy_rng"])
    else:
        template = build_template(manifest.resolution)
        pipeline = TransferPipeline.initialize(
            normalization=manifest.normalization,
            template_id=manifest.template_id,
            num_vertices=template.num_vertices,
            resolution=manifest.resolution,
            seed=config.seed,
            dtype=dtype,
        )
        train_state = None
        start_step = 0
        rng = np.random.default_rng(config.seed)

    optimizers = make_optimizers(pipeline, config)
    if train_state is not None:
        optimizers[0].load_state_dict(train_state["gen_optimizer"])
        optimizers[1].load_state_dict(train_state["disc_optimizer"])

    bank = CellBank(manifest, dtype)
    if config.rec_reduction != "sum":
        log(f"[train] rec uses {config.rec_reduction!r} reduction "
            "(sum-over-vertices divided by vertex count)")

    loss_path = os.path.join(out_dir, "loss_log.csv")
    eval_path = os.path.join(out_dir, "eval_log.csv")
    fresh_loss_log = not os.path.exists(loss_path)
    fresh_eval_log = not os.path.exists(eval_path)

    def save(path, step):
        state = {
            "step": step,
            "gen_optimizer": optimizers[0].state_dict(),
            "disc_optimizer": optimizers[1].state_dict(),
            "numpy_rng": json.dumps(rng.bit_generator.state),
            "config": json.dumps(config.to_dict()),
        }
        pipeline.save(path, train_state=state)

    final_path = os.path.join(out_dir, "checkpoint.pt")
    with open(loss_path, "a", encoding="ascii") as loss_log, \
         open(eval_path, "a", encoding="ascii") as eval_log:
        if fresh_loss_log:
            loss_log.write(LossReport.csv_header() + "\n")
        if fresh_eval_log:
            eval_log.write("step,split,hausdorff_mean,rmsd_mean\n")
        for step in range(start_step + 1, config.steps + 1):
            batch = bank.batch(rng, config.batch_size)
            try:
                report = train_step(pipeline, optimizers, batch, bank.edges, config)
            except NonFiniteLossError:
                snapshot = os.path.join(out_dir, f"diagnostic_step{step}.pt")
                save(snapshot, step)
                log(f"[train] aborting at step {step}; snapshot at {snapshot}")
                raise
            loss_log.write(report.csv_row(step) + "\n")
            loss_log.flush()
            if config.eval_every and step % config.eval_every == 0:
                for split in ("train", "validation"):
                    if manifest.cells(split):
                        m = evaluation.evaluate(pipeline, manifest, split)
                        eval_log.write(
                            f"{step},{split},{m.hausdorff_mean!r},{m.rmsd_mean!r}\n"
                        )
                eval_log.flush()
            if config.checkpoint_every and step % config.checkpoint_every == 0:
                save(os.path.join(out_dir, f"checkpoint_step{step}.pt"), step)
            if step % max(1, config.steps // 10) == 0 or step == config.steps:
                log(f"[train] step {step}/{config.steps} "
                    f"rec={report.rec:.5f} edge={report.edge:.5f} "
                    f"dist={report.dist:.5f} adver={report.adver:.4f} "
                    f"disc={report.disc:.4f} total={report.total:.5f}")
    save(final_path, config.steps)
    return final_path
