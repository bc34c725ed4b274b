"""Export kernels, activation patches and weighting tensors from a CNN.

Outputs use the pipeline's array file format (little-endian float32,
C order) and manifest schema, so the compression tool can consume an
export directory directly.  Patch matrices flatten receptive fields in
(channel, kh, kw) order with kw fastest, matching the pipeline's kernel
unfolding, and each patch file carries a sidecar JSON recording how the
samples were drawn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .datasets import iter_batches
from .models import build_model, compressible_layers

__all__ = ["ExportJob", "run_export", "export_kernels", "export_patches", "export_baseline_weights"]


@dataclass
class ExportJob:
    model_id: str
    out_dir: str
    layers: list[str] | None = None  # None = all compressible layers
    n: int = 64
    resolution: int = 32
    interpolation: str = "bilinear"
    dataset: str = "synthetic"
    seed: int = 0
    batch_size: int = 16
    sigma_only: bool = False  # accumulate covariance instead of raw patches
    weights_kind: str | None = None  # fisher | activation

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample count must be >= 1")

    def provenance(self) -> dict:
        return {
            "dataset": self.dataset,
            "n": self.n,
            "resolution": self.resolution,
            "interpolation": self.interpolation,
            "seed": self.seed,
        }


def save_array(path, tensor) -> None:
    arr = np.ascontiguousarray(
        tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else tensor,
        dtype=np.float32,
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.save(path, arr)


def _selected_layers(model: nn.Module, job: ExportJob) -> list[tuple[str, nn.Module]]:
    available = compressible_layers(model)
    if job.layers is None:
        return available
    by_name = dict(available)
    missing = [name for name in job.layers if name not in by_name]
    if missing:
        raise ValueError(f"unknown or unsupported layers: {missing}")
    return [(name, by_name[name]) for name in job.layers]


def _layer_by_name(model: nn.Module, name: str) -> nn.Module:
    by_name = dict(compressible_layers(model))
    if name not in by_name:
        raise ValueError(f"unknown or unsupported layer {name!r}")
    return by_name[name]


def export_kernels(job: ExportJob, model: nn.Module | None = None):
    """Write each selected layer's weight tensor and the model manifest.

    The model's first convolution is marked skip=true: compressing it is
    known to hurt accuracy, so the pipeline passes it through.
    """
    model = model or build_model(job.model_id, job.seed)
    out = Path(job.out_dir)
    selected = _selected_layers(model, job)
    first_conv = next(
        (name for name, mod in compressible_layers(model) if isinstance(mod, nn.Conv2d)), None
    )
    entries = []
    for name, module in selected:
        kernel_file = f"{name}.kernel.npy"
        save_array(out / kernel_file, module.weight)
        entries.append(
            {
                "name": name,
                "kind": "conv" if isinstance(module, nn.Conv2d) else "linear",
                "kernel_file": kernel_file,
                "dims": list(module.weight.shape),
                "skip": name == first_conv,
            }
        )
    manifest = {"model": job.model_id, "layers": entries}
    manifest_path = out / "manifest.json"
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path, entries


def _capture_layer_inputs(model: nn.Module, layer: nn.Module, batches):
    """Run the truncated network and yield the layer's input per batch."""
    captured: list[torch.Tensor] = []

    def hook(_module, args):
        captured.append(args[0].detach())
        raise _StopForward

    handle = layer.register_forward_pre_hook(hook)
    try:
        for batch in batches:
            captured.clear()
            try:
                with torch.no_grad():
                    model(batch)
            except _StopForward:
                pass
            if not captured:
                raise RuntimeError("layer was never reached during forward")
            yield captured[0]
    finally:
        handle.remove()


class _StopForward(Exception):
    """Raised by the capture hook to cut the forward pass short."""


def _unfold_input(layer: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Patch matrix (rows = flattened receptive field, cols = positions)."""
    if isinstance(layer, nn.Conv2d):
        cols = F.unfold(
            x,
            kernel_size=layer.kernel_size,
            padding=layer.padding,
            stride=layer.stride,
            dilation=layer.dilation,
        )  # (B, S*kh*kw, P)
        return cols.permute(1, 0, 2).reshape(cols.shape[1], -1)
    return x.reshape(-1, x.shape[-1]).T  # linear: feature columns


def export_patches(job: ExportJob, layer_name: str, model: nn.Module | None = None):
    """Sample activation patches at the layer input and write them (or their
    covariance when ``sigma_only``) plus a provenance sidecar."""
    model = model or build_model(job.model_id, job.seed)
    layer = _layer_by_name(model, layer_name)
    out = Path(job.out_dir)
    batches = iter_batches(
        job.dataset, job.n, job.resolution, job.interpolation, job.seed, job.batch_size
    )
    chunks = []
    sigma_sum = None
    count = 0
    for x in _capture_layer_inputs(model, layer, batches):
        cols = _unfold_input(layer, x)
        count += cols.shape[1]
        if job.sigma_only:
            cols64 = cols.double()
            update = cols64 @ cols64.T
            sigma_sum = update if sigma_sum is None else sigma_sum + update
        else:
            chunks.append(cols)

    sidecar = dict(job.provenance(), layer=layer_name, columns=count)
    if job.sigma_only:
        sigma = (sigma_sum / count).cpu().numpy()
        path = out / f"{layer_name}.sigma.npy"
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.ascontiguousarray(sigma, dtype=np.float64))
        sidecar["rows"] = sigma.shape[0]
    else:
        patches = torch.cat(chunks, dim=1)
        path = out / f"{layer_name}.patches.npy"
        save_array(path, patches)
        sidecar["rows"] = patches.shape[0]
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def export_baseline_weights(job: ExportJob, layer_name: str, kind: str, model=None):
    """Per-weight importance tensors for the element-weighted baselines.

    ``fisher`` averages squared loss gradients per weight (labels are drawn
    from the job seed for synthetic data); ``activation`` broadcasts each
    output channel's mean absolute activation over the kernel slab.  Both
    are non-negative by construction.
    """
    if kind not in ("fisher", "activation"):
        raise ValueError(f"kind must be 'fisher' or 'activation', got {kind!r}")
    model = model or build_model(job.model_id, job.seed)
    layer = _layer_by_name(model, layer_name)
    out = Path(job.out_dir)
    batches = iter_batches(
        job.dataset, job.n, job.resolution, job.interpolation, job.seed, job.batch_size
    )
    if kind == "activation":
        total = None
        count = 0
        handle_store: list[torch.Tensor] = []

        def hook(_module, _args, output):
            handle_store.append(output.detach())

        handle = layer.register_forward_hook(hook)
        try:
            with torch.no_grad():
                for batch in batches:
                    handle_store.clear()
                    model(batch)
                    act = handle_store[0].abs()
                    per_channel = act.transpose(0, 1).reshape(act.shape[1], -1)
                    total = per_channel.sum(dim=1) if total is None else total + per_channel.sum(dim=1)
                    count += per_channel.shape[1]
        finally:
            handle.remove()
        mean_abs = (total / count).reshape(-1, *([1] * (layer.weight.ndim - 1)))
        weights = mean_abs.expand_as(layer.weight)
    else:
        gen = torch.Generator().manual_seed(job.seed + 1)
        grad_sq = torch.zeros_like(layer.weight)
        n_batches = 0
        for batch in batches:
            model.zero_grad(set_to_none=True)
            logits = model(batch)
            labels = torch.randint(0, logits.shape[1], (batch.shape[0],), generator=gen)
            loss = F.cross_entropy(logits, labels)
            loss.backward()
            grad_sq += layer.weight.grad.detach() ** 2
            n_batches += 1
        weights = grad_sq / n_batches
    path = out / f"{layer_name}.weights_{kind}.npy"
    save_array(path, weights)
    return path


def run_export(job: ExportJob) -> Path:
    """Full export: kernels + manifest, then patches (or covariance) and
    optional weighting tensors for every non-skipped selected layer."""
    model = build_model(job.model_id, job.seed)
    manifest_path, entries = export_kernels(job, model)
    for entry in entries:
        if entry["skip"]:
            continue
        path = export_patches(job, entry["name"], model)
        key = "sigma_file" if job.sigma_only else "patches_file"
        entry[key] = path.name
        if job.weights_kind:
            wpath = export_baseline_weights(job, entry["name"], job.weights_kind, model)
            entry["weights_file"] = wpath.name
    manifest_path.write_text(
        json.dumps({"model": job.model_id, "layers": entries}, indent=2) + "\n"
    )
    return manifest_path
