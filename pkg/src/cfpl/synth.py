"""Synthetic multi-domain face-liveness surrogate data.

Live samples are smooth radial blobs; spoof samples overlay a fixed-
frequency sinusoidal grid (a stand-in for recapture moire). Domains differ
by a color tint and an additive noise level, giving a domain gap that does
not destroy the class signal. Rendering is fully determined by the seed, so
regenerated datasets are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import write_manifest

GRID_PERIOD = 8
GRID_AMPLITUDE = 0.22


@dataclass
class DomainSpec:
    name: str
    tint: tuple[float, float, float]
    noise: float


def domain_specs(count: int) -> list[DomainSpec]:
    """Distinct tints around the hue circle, noise increasing per domain."""
    specs = []
    for i in range(count):
        angle = 2.0 * np.pi * i / max(count, 1)
        tint = (
            0.75 + 0.25 * np.cos(angle),
            0.75 + 0.25 * np.cos(angle - 2.0 * np.pi / 3.0),
            0.75 + 0.25 * np.cos(angle + 2.0 * np.pi / 3.0),
        )
        # noise spread kept small relative to the grid signal so the class
        # stays linearly separable across domains; tint carries the domain gap
        specs.append(DomainSpec(name=f"d{i}", tint=tint, noise=0.01 + 0.006 * i))
    return specs


def render_image(spec: DomainSpec, label: int, rng: np.random.Generator,
                 size: int = 64) -> np.ndarray:
    """One uint8 HWC image: blob (live) or blob + grid (spoof)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size * rng.uniform(0.35, 0.65)
    cy = size * rng.uniform(0.35, 0.65)
    radius = size * rng.uniform(0.30, 0.45)
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    blob = np.clip(1.0 - dist / radius, 0.0, 1.0)
    base = 0.25 + 0.6 * blob
    if label == 0:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        grid = 0.5 * (np.sin(2.0 * np.pi * xx / GRID_PERIOD + phase)
                      + np.sin(2.0 * np.pi * yy / GRID_PERIOD + phase))
        base = base + GRID_AMPLITUDE * grid
    img = base[:, :, None] * np.asarray(spec.tint)[None, None, :]
    img = img + rng.normal(0.0, spec.noise, size=(size, size, 3))
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def synth_dataset(out_dir, domains: int, per_class: int, seed: int,
                  size: int = 64) -> dict:
    """Render a balanced multi-domain dataset under ``out_dir``.

    Writes one PNG per sample, a combined manifest, one manifest per domain,
    and a protocol spec wiring the per-domain manifests together. Returns
    the paths of everything written.
    """
    if domains < 2:
        raise ValueError("need at least 2 domains")
    if per_class < 8:
        raise ValueError("need at least 8 samples per class per domain")
    out = Path(out_dir)
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    specs = domain_specs(domains)
    all_entries: list[tuple[str, int, str]] = []
    per_domain: dict[str, list[tuple[str, int, str]]] = {}
    for d_idx, spec in enumerate(specs):
        entries = []
        for label, tag in ((1, "live"), (0, "spoof")):
            for k in range(per_class):
                rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence(entropy=(seed, d_idx, label, k))))
                arr = render_image(spec, label, rng, size=size)
                name = f"images/{spec.name}_{tag}_{k:03d}.png"
                Image.fromarray(arr).save(out / name)
                entries.append((name, label, spec.name))
        per_domain[spec.name] = entries
        all_entries.extend(entries)

    manifest_path = out / "manifest.csv"
    write_manifest(manifest_path, all_entries)
    domain_paths = {}
    for name, entries in per_domain.items():
        path = out / f"domain_{name}.csv"
        write_manifest(path, entries)
        domain_paths[name] = path

    protocol_path = out / "protocol.cfg"
    lines = [f"domains = {','.join(per_domain)}"]
    lines += [f"manifest.{name} = domain_{name}.csv" for name in per_domain]
    protocol_path.write_text("\n".join(lines) + "\n")

    return {
        "manifest": manifest_path,
        "domains": domain_paths,
        "protocol": protocol_path,
        "images": image_dir,
        "count": len(all_entries),
    }
