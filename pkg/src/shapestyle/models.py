"""The three networks: pose-feature encoder, style-conditioned decoder, shape
discriminator, plus the pipeline bundle that moves meshes through them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import (
    EPS_DEFAULT,
    AdaptiveResBlock,
    PointwiseLinear,
    StyleStats,
    instance_norm,
    style_stats,
)
from .data import Normalization
from .mesh import Mesh

ENCODER_WIDTHS = (3, 64, 128, 1024)
DECODER_WIDTHS = (1024, 1024, 512, 256, 3)
STYLE_WIDTHS = (1024, 512, 256)
DISC_POINT_WIDTHS = (3, 64, 128, 256)
DISC_HEAD_WIDTHS = (256, 64, 1)

CHECKPOINT_FORMAT = 1


class TemplateMismatchError(ValueError):
    """Meshes fed to the pipeline do not share the expected template."""


class PoseEncoder(nn.Module):
    """Shared per-vertex MLP extracting pose features; no pooling, so the
    latent keeps one column per vertex and is exactly permutation-equivariant."""

    def __init__(self, widths=ENCODER_WIDTHS, dtype=torch.float32, generator=None):
        super().__init__()
        self.widths = tuple(widths)
        self.layers = nn.ModuleList(
            PointwiseLinear(a, b, dtype=dtype, generator=generator)
            for a, b in zip(widths[:-1], widths[1:])
        )

    def forward(self, x):
        for layer in self.layers:
            x = torch.relu(layer(x))
        return x


class StyleEncoder(nn.Module):
    """Projects identity features to one channel-statistics pair per decoder
    residual block."""

    def __init__(self, in_channels=ENCODER_WIDTHS[-1], widths=STYLE_WIDTHS,
                 eps=EPS_DEFAULT, dtype=torch.float32, generator=None):
        super().__init__()
        self.widths = tuple(widths)
        self.eps = eps
        self.projections = nn.ModuleList(
            PointwiseLinear(in_channels, w, dtype=dtype, generator=generator) for w in widths
        )

    def forward(self, features) -> list[StyleStats]:
        return [style_stats(proj(features), self.eps) for proj in self.projections]


class Decoder(nn.Module):
    """Alternating shared linear maps and style-conditioned residual blocks;
    final tanh keeps coordinates inside the normalized box."""

    def __init__(self, widths=DECODER_WIDTHS, eps=EPS_DEFAULT, dtype=torch.float32,
                 generator=None):
        super().__init__()
        if len(widths) != 5:
            raise ValueError("decoder takes 5 widths (input, 3 stages, output)")
        self.widths = tuple(widths)
        self.eps = eps
        self.convs = nn.ModuleList(
            PointwiseLinear(a, b, dtype=dtype, generator=generator)
            for a, b in zip(widths[:-2], widths[1:-1])
        )
        self.blocks = nn.ModuleList(
            AdaptiveResBlock(w, eps=eps, dtype=dtype, generator=generator)
            for w in widths[1:-1]
        )
        self.out = PointwiseLinear(widths[-2], widths[-1], dtype=dtype, generator=generator)

    def forward(self, z, styles):
        if len(styles) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} styles, got {len(styles)}")
        h = z
        for conv, block, style in zip(self.convs, self.blocks, styles):
            h = torch.relu(instance_norm(conv(h), self.eps))
            h = block(h, style)
        return torch.tanh(self.out(h))


class Discriminator(nn.Module):
    """PointNet-style real/fake classifier: shared per-vertex MLP, max pool
    over the vertex axis, then a small head with a sigmoid output."""

    def __init__(self, point_widths=DISC_POINT_WIDTHS, head_widths=DISC_HEAD_WIDTHS,
                 dtype=torch.float32, generator=None):
        super().__init__()
        self.point_widths = tuple(point_widths)
        self.head_widths = tuple(head_widths)
        self.point_layers = nn.ModuleList(
            PointwiseLinear(a, b, dtype=dtype, generator=generator)
            for a, b in zip(point_widths[:-1], point_widths[1:])
        )
        self.head_layers = nn.ModuleList(
            PointwiseLinear(a, b, dtype=dtype, generator=generator)
            for a, b in zip(head_widths[:-1], head_widths[1:])
        )

    def forward(self, x):
        h = x
        for layer in self.point_layers:
            h = torch.relu(layer(h))
        g = h.max(dim=-1).values[..., :, None]
        for layer in self.head_layers[:-1]:
            g = torch.relu(layer(g))
        logit = self.head_layers[-1](g)[..., 0, 0]
        return torch.sigmoid(logit)


class Generator(nn.Module):
    """Encoder + style encoder + decoder; the encoder is shared between the
    pose path and the identity path."""

    def __init__(self, encoder_widths=ENCODER_WIDTHS, style_widths=STYLE_WIDTHS,
                 decoder_widths=DECODER_WIDTHS, eps=EPS_DEFAULT, dtype=torch.float32,
                 generator=None):
        super().__init__()
        if encoder_widths[-1] != decoder_widths[0]:
            raise ValueError("encoder output width must match decoder input width")
        if tuple(style_widths) != tuple(decoder_widths[1:-1]):
            raise ValueError("style widths must match the decoder stage widths")
        self.eps = eps
        self.encoder = PoseEncoder(encoder_widths, dtype=dtype, generator=generator)
        self.style_encoder = StyleEncoder(
            encoder_widths[-1], style_widths, eps=eps, dtype=dtype, generator=generator
        )
        self.decoder = Decoder(decoder_widths, eps=eps, dtype=dtype, generator=generator)

    def encode_style(self, identity_coords) -> list[StyleStats]:
        return self.style_encoder(self.encoder(identity_coords))

    def forward(self, posed_coords, identity_coords):
        z = self.encoder(posed_coords)
        styles = self.encode_style(identity_coords)
        return self.decoder(z, styles)

    def arch_config(self) -> dict:
        return {
            "encoder_widths": list(self.encoder.widths),
            "style_widths": list(self.style_encoder.widths),
            "decoder_widths": list(self.decoder.widths),
            "eps": self.eps,
        }


def module_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


@dataclass
class TransferPipeline:
    """A trained (or initialized) system: networks, normalization, template."""

    generator: Generator
    discriminator: Discriminator
    normalization: Normalization
    template_id: str
    num_vertices: int
    resolution: int

    @classmethod
    def initialize(cls, normalization, template_id, num_vertices, resolution,
                   seed=0, dtype=torch.float32, encoder_widths=ENCODER_WIDTHS,
                   style_widths=STYLE_WIDTHS, decoder_widths=DECODER_WIDTHS,
                   disc_point_widths=DISC_POINT_WIDTHS, disc_head_widths=DISC_HEAD_WIDTHS,
                   eps=EPS_DEFAULT) -> "TransferPipeline":
        g = torch.Generator().manual_seed(seed)
        return cls(
            generator=Generator(encoder_widths, style_widths, decoder_widths,
                                eps=eps, dtype=dtype, generator=g),
            discriminator=Discriminator(disc_point_widths, disc_head_widths,
                                        dtype=dtype, generator=g),
            normalization=normalization,
            template_id=template_id,
            num_vertices=num_vertices,
            resolution=resolution,
        )

    @property
    def dtype(self) -> torch.dtype:
        return module_dtype(self.generator)

    def mesh_to_coords(self, mesh: Mesh) -> torch.Tensor:
        """Normalized coordinates as a (3, V) tensor in the pipeline dtype."""
        self.check_mesh(mesh)
        normalized = self.normalization.normalize(mesh.vertices)
        return torch.from_numpy(normalized.T.copy()).to(self.dtype)

    def coords_to_vertices(self, coords: torch.Tensor) -> np.ndarray:
        """Denormalize a (3, V) coordinate tensor back to meters."""
        arr = coords.detach().cpu().double().numpy().T
        return self.normalization.denormalize(arr)

    def check_mesh(self, mesh: Mesh):
        if mesh.num_vertices != self.num_vertices:
            raise TemplateMismatchError(
                f"mesh has {mesh.num_vertices} vertices, pipeline template "
                f"{self.template_id!r} expects {self.num_vertices}"
            )

    def transfer(self, posed: Mesh, identity: Mesh) -> Mesh:
        """Deform `posed` to adopt `identity`'s body-shape style.

        Output keeps the posed mesh's connectivity bit-for-bit.
        """
        if posed.num_vertices != identity.num_vertices or not np.array_equal(
            posed.faces, identity.faces
        ):
            raise TemplateMismatchError(
                f"posed and identity meshes are on different templates "
                f"({posed.num_vertices} vs {identity.num_vertices} vertices)"
            )
        self.check_mesh(posed)
        with torch.no_grad():
            out = self.generator(self.mesh_to_coords(posed), self.mesh_to_coords(identity))
        return posed.with_vertices(self.coords_to_vertices(out))

    # -- checkpointing -----------------------------------------------------

    def save(self, path, train_state: dict | None = None):
        payload = {
            "format_version": CHECKPOINT_FORMAT,
            "kind": "shapestyle-checkpoint",
            "arch": {
                **self.generator.arch_config(),
                "disc_point_widths": list(self.discriminator.point_widths),
                "disc_head_widths": list(self.discriminator.head_widths),
                "dtype": str(self.dtype).removeprefix("torch."),
            },
            "generator_state": self.generator.state_dict(),
            "discriminator_state": self.discriminator.state_dict(),
            "normalization": self.normalization.to_dict(),
            "template": {
                "template_id": self.template_id,
                "num_vertices": self.num_vertices,
                "resolution": self.resolution,
            },
            "train_state": train_state,
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> tuple["TransferPipeline", dict | None]:
        payload = torch.load(path, weights_only=True)
        if payload.get("kind") != "shapestyle-checkpoint":
            raise ValueError(f"{path} is not a shapestyle checkpoint")
        if payload["format_version"] != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {payload['format_version']}")
        arch = payload["arch"]
        dtype = getattr(torch, arch["dtype"])
        pipeline = cls.initialize(
            normalization=Normalization.from_dict(payload["normalization"]),
            template_id=payload["template"]["template_id"],
            num_vertices=payload["template"]["num_vertices"],
            resolution=payload["template"]["resolution"],
            dtype=dtype,
            encoder_widths=tuple(arch["encoder_widths"]),
            style_widths=tuple(arch["style_widths"]),
            decoder_widths=tuple(arch["decoder_widths"]),
            disc_point_widths=tuple(arch["disc_point_widths"]),
            disc_head_widths=tuple(arch["disc_head_widths"]),
            eps=arch["eps"],
        )
        pipeline.generator.load_state_dict(payload["generator_state"])
        pipeline.discriminator.load_state_dict(payload["discriminator_state"])
        return pipeline, payload.get("train_state")
