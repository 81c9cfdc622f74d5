"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The two training criteria
(5 and 6) dominate the runtime; everything else finishes in seconds.
"""

import math
import time

import numpy as np
import pytest
import torch

from conftest import (
    finite_difference_gradient,
    icosahedron,
    relative_error,
    toy_pipeline,
)
from shapestyle.blocks import ada_in, instance_norm, style_stats
from shapestyle.data import build_template, generate_body, make_manifest
from shapestyle.evaluation import copy_input_baseline, evaluate, hausdorff
from shapestyle.evaluation import rmsd as rmsd_metric
from shapestyle.losses import (
    LossWeights,
    loss_adversarial,
    loss_discriminator,
    loss_dist,
    loss_edge,
    loss_rec,
    loss_total,
)
from shapestyle.mesh import distance_matrix, edge_set
from shapestyle.models import Discriminator, PoseEncoder, TransferPipeline
from shapestyle.training import TrainConfig, fit

DESK_SEED = 20  # dataset seed shared by the training criteria

# criterion 5: 4x6 grid, 511-vertex template, 2000 steps at the default
# learning rates; batch 3 keeps the run inside the 30-minute CPU budget
DESK_TRAIN = dict(
    steps=2000, batch_size=3, seed=0, checkpoint_every=1000, eval_every=1000,
)

# criterion 6 part B: reduced scale (339-vertex template), three seeds
ABLATION_TRAIN = dict(
    steps=900, batch_size=2, checkpoint_every=0, eval_every=0,
)
ABLATION_SEEDS = (0, 1, 2)


def _pass(n, detail):
    print(f"\n[acceptance] criterion {n}: PASS  ({detail})")


# ---------------------------------------------------------------------------
# 1. normalization identities


def test_criterion_1_normalization_identities():
    start = time.time()
    rng = np.random.default_rng(101)
    worst_var = worst_std = 0.0
    for _ in range(100):
        c = int(rng.integers(4, 1025))
        v = int(rng.integers(8, 501))
        ramp = np.linspace(-1.0, 1.0, v)  # keeps channel variance well away from 0
        x = torch.tensor(rng.normal(size=(c, v)) * rng.uniform(0.8, 2.0) + ramp,
                         dtype=torch.float64)
        out = instance_norm(x)
        assert float(out.mean(dim=-1).abs().max()) < 1e-6
        var_dev = float((out.var(dim=-1, unbiased=False) - 1).abs().max())
        worst_var = max(worst_var, var_dev)
        assert var_dev < 1e-3

        y = torch.tensor(rng.normal(size=(c, v)) * 1.5 + ramp + 0.5, dtype=torch.float64)
        style = style_stats(y)
        stats = style_stats(ada_in(x, style))
        assert float((stats.mean - style.mean).abs().max()) < 1e-4
        std_dev = float((stats.std - style.std).abs().max())
        worst_std = max(worst_std, std_dev)
        assert std_dev < 1e-4
    elapsed = time.time() - start
    assert elapsed < 60
    _pass(1, f"100 maps, worst var dev {worst_var:.1e}, worst AdaIN std dev "
             f"{worst_std:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. gradient correctness


def _autograd_input_gradient(fn, x0):
    xt = torch.tensor(x0, dtype=torch.float64, requires_grad=True)
    fn(xt).backward()
    return xt.grad.numpy()


def test_criterion_2_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(202)
    mesh = icosahedron()
    edges = edge_set(mesh)
    ref = torch.tensor(mesh.vertices.T * 0.3, dtype=torch.float64)
    checks = []

    g0 = rng.normal(size=(3, 12)) * 0.4
    cases = [
        ("rec", lambda g: loss_rec(g, ref, reduction="mean")),
        ("edge-length", lambda g: loss_edge(g, ref, edges, mode="length")),
        ("edge-literal", lambda g: loss_edge(g, ref, edges, mode="literal")),
        ("dist", lambda g: loss_dist(g, ref)),
    ]
    for name, fn in cases:
        analytic = _autograd_input_gradient(fn, g0)
        fd = finite_difference_gradient(
            lambda a: float(fn(torch.as_tensor(a, dtype=torch.float64))), g0.copy()
        )
        err = relative_error(analytic, fd)
        checks.append((name, err))
        assert err < 1e-4, (name, err)

    p0 = rng.uniform(0.2, 0.8, size=6)
    q0 = rng.uniform(0.2, 0.8, size=6)
    for name, fn in (
        ("adversarial", lambda p: loss_adversarial(p)),
        ("discriminator-real",
         lambda p: loss_discriminator(p, torch.as_tensor(q0, dtype=torch.float64))),
        ("discriminator-fake",
         lambda p: loss_discriminator(torch.as_tensor(q0, dtype=torch.float64), p)),
    ):
        analytic = _autograd_input_gradient(fn, p0)
        fd = finite_difference_gradient(
            lambda a: float(fn(torch.as_tensor(a, dtype=torch.float64))), p0.copy()
        )
        err = relative_error(analytic, fd)
        checks.append((name, err))
        assert err < 1e-4, (name, err)

    # end-to-end toy network: widths / 8, 12-vertex mesh, all four terms
    pipe = toy_pipeline(seed=9)
    x = torch.tensor(mesh.vertices.T * 0.3, dtype=torch.float64)
    target = x * 0.8
    weights = LossWeights()

    def total_loss():
        out = pipe.generator(x, x)
        return (
            weights.adver * loss_adversarial(pipe.discriminator(out))
            + weights.rec * loss_rec(out, target, reduction="mean")
            + weights.edge * loss_edge(out, x, edges)
            + weights.dist * loss_dist(out, target)
        )

    params = list(pipe.generator.named_parameters()) + list(
        pipe.discriminator.named_parameters()
    )
    pipe.generator.zero_grad()
    pipe.discriminator.zero_grad()
    total_loss().backward()
    param_rng = np.random.default_rng(7)
    worst_e2e = 0.0
    picked = param_rng.choice(len(params), size=12, replace=False)
    for idx in picked:
        name, param = params[idx]
        flat_index = int(param_rng.integers(param.numel()))
        analytic = param.grad.reshape(-1)[flat_index].item()
        h = 1e-5
        with torch.no_grad():
            flat = param.reshape(-1)
            original = flat[flat_index].item()
            flat[flat_index] = original + h
            fp = float(total_loss())
            flat[flat_index] = original - h
            fm = float(total_loss())
            flat[flat_index] = original
        fd = (fp - fm) / (2 * h)
        err = relative_error(np.array([analytic]), np.array([fd]))
        worst_e2e = max(worst_e2e, err)
        assert err < 1e-3, (name, flat_index, analytic, fd)

    elapsed = time.time() - start
    assert elapsed < 300
    loss_summary = ", ".join(f"{n}={e:.1e}" for n, e in checks)
    _pass(2, f"losses [{loss_summary}]; end-to-end worst {worst_e2e:.1e}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. metric oracles


def test_criterion_3_metric_oracles():
    start = time.time()
    rng = np.random.default_rng(303)

    def directed_bruteforce(p, q):
        worst = 0.0
        for x in p:
            best = math.inf
            for y in q:
                dx, dy, dz = x - y
                best = min(best, math.sqrt(dx * dx + dy * dy + dz * dz))
            worst = max(worst, best)
        return worst

    for _ in range(50):
        a = rng.normal(size=(int(rng.integers(2, 201)), 3))
        b = rng.normal(size=(int(rng.integers(2, 201)), 3))
        assert hausdorff(a, b) == max(directed_bruteforce(a, b), directed_bruteforce(b, a))

    pts = rng.normal(size=(60, 3))
    d = distance_matrix(pts)
    for i in range(60):
        for j in range(60):
            dx, dy, dz = pts[i] - pts[j]
            assert abs(d[i, j] - math.sqrt(dx * dx + dy * dy + dz * dz)) < 1e-9

    g = rng.normal(size=(25, 3))
    t = rng.normal(size=(25, 3))
    total, n = 0.0, 0
    for i in range(25):
        for j in range(i + 1, 25):
            du = math.sqrt(sum((t[i] - t[j]) ** 2))
            dv = math.sqrt(sum((g[i] - g[j]) ** 2))
            total += (du - dv) ** 2
            n += 1
    torch_val = float(loss_dist(torch.tensor(g.T), torch.tensor(t.T)))
    assert abs(torch_val - total / n) < 1e-9

    elapsed = time.time() - start
    assert elapsed < 60
    _pass(3, f"hausdorff exact on 50 pairs; dist oracles within 1e-9; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. permutation contracts


def test_criterion_4_permutation_contracts(template0):
    coords = torch.tensor(template0.mesh.vertices.T, dtype=torch.float64)
    g = torch.Generator().manual_seed(44)
    encoder = PoseEncoder(dtype=torch.float64, generator=g)
    disc = Discriminator(dtype=torch.float64, generator=g)
    rng = np.random.default_rng(404)
    with torch.no_grad():
        features = encoder(coords)
        probability = float(disc(coords))
        normed = instance_norm(coords)
        worst = 0.0
        for _ in range(20):
            perm = torch.tensor(rng.permutation(coords.shape[1]))
            e_dev = float((encoder(coords[:, perm]) - features[:, perm]).abs().max())
            d_dev = abs(float(disc(coords[:, perm])) - probability)
            n_dev = float((instance_norm(coords[:, perm]) - normed[:, perm]).abs().max())
            worst = max(worst, e_dev, d_dev, n_dev)
            assert e_dev < 1e-6 and d_dev < 1e-6 and n_dev < 1e-6
    _pass(4, f"20 permutations, worst deviation {worst:.1e}")


# ---------------------------------------------------------------------------
# 5 + 6. training criteria (shared desk-scale run)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    manifest = make_manifest(4, 6, seed=DESK_SEED, resolution=1)
    out = tmp_path_factory.mktemp("desk_run")
    config = TrainConfig(**DESK_TRAIN)
    start = time.time()
    checkpoint = fit(manifest, config, out, log=lambda *a: None)
    elapsed = time.time() - start
    return manifest, checkpoint, out, elapsed


def test_criterion_5_desk_scale_overfit(desk_run):
    manifest, checkpoint, out, elapsed = desk_run
    template = build_template(1)
    assert template.num_vertices == 511

    rows = (out / "loss_log.csv").read_text().strip().splitlines()[1:]
    assert len(rows) == DESK_TRAIN["steps"]
    rec_first = float(rows[0].split(",")[1])
    rec_last = float(rows[-1].split(",")[1])
    assert rec_last < 0.01 * rec_first, (rec_first, rec_last)

    lo, hi = template.mesh.bounding_box()
    diagonal = float(np.linalg.norm(hi - lo))
    train_report = evaluate(checkpoint, manifest, "train")
    assert train_report.rmsd_mean < 0.02 * diagonal, (train_report.rmsd_mean, diagonal)

    # self-transfer: with the trained model, a mesh styled by itself comes
    # back below the same overfit threshold
    pipeline, _ = TransferPipeline.load(checkpoint)
    for spec in manifest.cells("train")[:3]:
        mesh = generate_body(template, spec)
        recon = pipeline.transfer(mesh, mesh)
        assert rmsd_metric(recon.vertices, mesh.vertices) < 0.02 * diagonal

    assert elapsed <= 1800, f"training took {elapsed:.0f}s"
    _pass(5, f"rec {rec_first:.4f}->{rec_last:.5f} ({rec_last / rec_first * 100:.2f}%), "
             f"train rmsd {train_report.rmsd_mean * 100:.2f}cm vs 2% diag "
             f"{0.02 * diagonal * 100:.2f}cm, {elapsed / 60:.1f} min")


def test_criterion_6_generalization_direction(desk_run, tmp_path_factory):
    manifest, checkpoint, _, _ = desk_run

    # (a) trained transfer beats the copy-input baseline by >= 30% on the
    # held-out split (which includes one fully unseen shape)
    val_report = evaluate(checkpoint, manifest, "validation")
    baseline = copy_input_baseline(manifest, "validation")
    assert val_report.rmsd_mean <= 0.7 * baseline.rmsd_mean, (
        val_report.rmsd_mean, baseline.rmsd_mean)

    # ordering oracle: an untrained pipeline of the same architecture is
    # strictly worse than the trained one on the same split
    trained, _ = TransferPipeline.load(checkpoint)
    untrained = TransferPipeline.initialize(
        manifest.normalization, manifest.template_id,
        trained.num_vertices, manifest.resolution, seed=123,
    )
    untrained_report = evaluate(untrained, manifest, "validation")
    assert untrained_report.rmsd_mean > val_report.rmsd_mean

    # (b) with-discriminator validation HDFF <= without-discriminator
    # in at least 2 of 3 seeds, at reduced desk scale
    small = make_manifest(4, 6, seed=DESK_SEED, resolution=0)
    out = tmp_path_factory.mktemp("ablation")
    wins = 0
    outcomes = []
    for seed in ABLATION_SEEDS:
        hdff = {}
        for use_d in (True, False):
            config = TrainConfig(**ABLATION_TRAIN, seed=seed, use_discriminator=use_d)
            run_dir = out / f"seed{seed}_{'with' if use_d else 'without'}"
            ck = fit(small, config, run_dir, log=lambda *a: None)
            hdff[use_d] = evaluate(ck, small, "validation").hausdorff_mean
        outcomes.append((seed, hdff[True], hdff[False]))
        wins += hdff[True] <= hdff[False]
    assert wins >= 2, outcomes

    detail = "; ".join(f"seed {s}: {w:.4f} vs {wo:.4f}" for s, w, wo in outcomes)
    _pass(6, f"val rmsd {val_report.rmsd_mean:.4f} <= 0.7 x baseline "
             f"{baseline.rmsd_mean:.4f}; D wins {wins}/3 [{detail}]")


# ---------------------------------------------------------------------------
# 7. determinism and resumption


def test_criterion_7_determinism_and_resumption(tmp_path):
    manifest = make_manifest(2, 3, seed=3, resolution=0)
    config = TrainConfig(steps=8, batch_size=2, seed=4, checkpoint_every=4, eval_every=0)
    fit(manifest, config, tmp_path / "a", log=lambda *a: None)
    fit(manifest, config, tmp_path / "b", log=lambda *a: None)
    log_a = (tmp_path / "a" / "loss_log.csv").read_bytes()
    log_b = (tmp_path / "b" / "loss_log.csv").read_bytes()
    assert log_a == log_b

    fit(manifest, config, tmp_path / "resumed",
        resume_from=tmp_path / "a" / "checkpoint_step4.pt", log=lambda *a: None)
    full_rows = log_a.decode().strip().splitlines()[1:]
    resumed_rows = (tmp_path / "resumed" / "loss_log.csv").read_text().strip().splitlines()[1:]
    assert resumed_rows == full_rows[4:]
    _pass(7, "same-seed logs bitwise identical; resume reproduces steps 5-8 exactly")


# ---------------------------------------------------------------------------
# 8. loss-weight wiring


def test_criterion_8_loss_weight_wiring():
    weights = LossWeights()
    assert (weights.adver, weights.rec, weights.edge, weights.dist) == (0.1, 2.0, 0.5, 2.0)
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(1000):
        rec, edge, dist = rng.uniform(0, 5, 3)
        adver = rng.uniform(-5, 5)
        disc = rng.uniform(0, 5)
        report = loss_total(rec=rec, edge=edge, dist=dist, adver=adver, disc=disc,
                            weights=weights)
        expected = sum([0.1 * adver, 2.0 * rec, 0.5 * edge, 2.0 * dist])
        worst = max(worst, abs(report.total - expected))
        assert abs(report.total - expected) <= 1e-9
    _pass(8, f"1000 tuples, worst wiring deviation {worst:.1e}")
