"""Model-level orchestration: manifests, per-layer compression, reports.

A manifest lists the layers of a model with their kernel files and
optional covariance inputs; compression plans ranks, runs the configured
decomposition per layer, writes factor files and records errors and
parameter counts in a versioned JSON report that the ``verify`` command
can re-check from the emitted files alone.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import decomp, npyio, rank_select
from .covariance import (
    SigmaRoot,
    estimate_sigma,
    relative_recon_error,
    sigma_root_from_matrix,
)
from .errors import SigmaLowrankError, ValidationError
from .linalg import SymSolveConfig, truncated_svd
from .tensor import (
    CpFactors,
    Tucker2Factors,
    cp_reconstruct,
    tucker2_reconstruct,
    unfold_mode,
)

__all__ = [
    "LayerEntry",
    "ModelManifest",
    "CompressConfig",
    "CompressionError",
    "load_manifest",
    "compress_model",
    "evaluate_functional_error",
    "verify_report",
    "read_tensor",
    "write_tensor",
]

REPORT_SCHEMA = "sigma-lowrank/1"

read_tensor = npyio.read_tensor
write_tensor = npyio.write_tensor


@dataclass(frozen=True)
class LayerEntry:
    name: str
    kind: str  # "conv" | "linear"
    kernel_file: str
    dims: tuple[int, ...]
    patches_file: str | None = None
    sigma_file: str | None = None
    weights_file: str | None = None
    skip: bool = False


@dataclass(frozen=True)
class ModelManifest:
    model: str
    layers: tuple[LayerEntry, ...]
    base_dir: Path = field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


class CompressionError(SigmaLowrankError):
    """A layer failed mid-run; carries the report of completed layers."""

    def __init__(self, message: str, partial_report: dict):
        super().__init__(message)
        self.partial_report = partial_report


def load_manifest(path) -> ModelManifest:
    """Parse and validate a manifest JSON against its kernel file headers."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "model" not in raw or "layers" not in raw:
        raise ValidationError(f"{path}: manifest needs 'model' and 'layers'")
    base = path.parent
    layers = []
    for entry in raw["layers"]:
        try:
            layer = LayerEntry(
                name=entry["name"],
                kind=entry["kind"],
                kernel_file=entry["kernel_file"],
                dims=tuple(entry["dims"]),
                patches_file=entry.get("patches_file"),
                sigma_file=entry.get("sigma_file"),
                weights_file=entry.get("weights_file"),
                skip=bool(entry.get("skip", False)),
            )
        except KeyError as exc:
            raise ValidationError(f"{path}: layer entry missing key {exc}") from exc
        if layer.kind not in ("conv", "linear"):
            raise ValidationError(f"{path}: layer {layer.name}: unknown kind {layer.kind!r}")
        expected_ndim = 4 if layer.kind == "conv" else 2
        if len(layer.dims) != expected_ndim:
            raise ValidationError(
                f"{path}: layer {layer.name}: {layer.kind} layers need "
                f"{expected_ndim}-way dims, got {layer.dims}"
            )
        kernel_path = path.parent / layer.kernel_file if not Path(layer.kernel_file).is_absolute() else Path(layer.kernel_file)
        shape, _ = npyio.read_header(kernel_path)
        if tuple(shape) != layer.dims:
            raise ValidationError(
                f"{path}: layer {layer.name}: manifest dims {layer.dims} != file shape {shape}"
            )
        layers.append(layer)
    return ModelManifest(model=str(raw["model"]), layers=tuple(layers), base_dir=base)


@dataclass(frozen=True)
class CompressConfig:
    method: str = "cp"  # cp | tucker2 | svd (linear layers always use svd)
    norm: str = "frobenius"  # frobenius | sigma
    alpha: float = 1.0
    epsilon: float = 1e-6
    sweeps: int = 50
    tol: float = 1e-6
    seed: int | None = None
    out_dir: str = "."
    jobs: int = 1

    def __post_init__(self):
        if self.method not in ("cp", "tucker2", "svd"):
            raise ValidationError(f"unknown method {self.method!r}")
        if self.norm not in ("frobenius", "sigma"):
            raise ValidationError(f"unknown norm {self.norm!r}")

    def als_config(self) -> decomp.AlsConfig:
        return decomp.AlsConfig(
            max_sweeps=self.sweeps,
            rel_tol=self.tol,
            seed=self.seed,
            solver=SymSolveConfig(epsilon_scale=self.epsilon),
        )


def evaluate_functional_error(k, k_tilde, patches) -> float:
    """Root-mean-square output discrepancy over patch columns.

    Computed as ||unfold1(K - K~) @ patches||_F / sqrt(n_columns); matches
    the weighted norm with the covariance estimated from the same patches
    (mean normalization, no ridge).
    """
    k = np.asarray(k, dtype=np.float64)
    k_tilde = np.asarray(k_tilde, dtype=np.float64)
    patches = np.asarray(patches, dtype=np.float64)
    diff = (k - k_tilde) if k.ndim == 2 else unfold_mode(k - k_tilde, 1)
    if diff.shape[1] != patches.shape[0]:
        raise ValidationError(
            f"patch rows {patches.shape[0]} != kernel patch dim {diff.shape[1]}"
        )
    return float(np.linalg.norm(diff @ patches) / np.sqrt(patches.shape[1]))


def _layer_root(manifest: ModelManifest, layer: LayerEntry, cfg: CompressConfig) -> SigmaRoot:
    solve_cfg = SymSolveConfig(epsilon_scale=cfg.epsilon)
    if layer.sigma_file:
        sigma = npyio.read_tensor(manifest.resolve(layer.sigma_file))
        return sigma_root_from_matrix(sigma, solve_cfg, provenance=layer.sigma_file)
    patches = npyio.read_tensor(manifest.resolve(layer.patches_file))
    acc = estimate_sigma([patches])
    return sigma_root_from_matrix(
        acc.finalize("mean"), solve_cfg,
        provenance=f"{layer.patches_file} ({acc.count} patches)",
    )


def _sweeps_from_trace(trace: list[float], per_sweep: int) -> int:
    return (len(trace) - 1) // per_sweep if per_sweep else 0


def _compress_matrix(w, root, rank, cfg):
    if root is None:
        u, s, v = truncated_svd(w, rank)
        factors = decomp.SvdFactors(u, (v * s).T)
    else:
        factors = decomp.svd_sigma(w, root, rank)
    return factors, factors.reconstruct(), {"A": factors.a, "B": factors.b}


def _compress_layer(manifest: ModelManifest, layer: LayerEntry, cfg: CompressConfig) -> dict:
    kernel_path = manifest.resolve(layer.kernel_file)
    k = npyio.read_tensor(kernel_path)
    if tuple(k.shape) != layer.dims:
        raise ValidationError(f"layer {layer.name}: file shape {k.shape} != dims {layer.dims}")
    method = "svd" if layer.kind == "linear" else cfg.method
    matrix_view = k if layer.kind == "linear" else unfold_mode(k, 1)

    root = _layer_root(manifest, layer, cfg) if cfg.norm == "sigma" else None
    als_cfg = cfg.als_config()

    plan = rank_select.plan_ranks(k if method != "svd" else matrix_view, method, cfg.alpha)
    if method == "cp":
        rank = plan.ranks[0]
        if root is None:
            factors, trace = decomp.cp_als(k, rank, als_cfg)
        else:
            factors, trace = decomp.cp_als_sigma(k, root, rank, als_cfg)
        recon = cp_reconstruct(factors)
        arrays = {
            "U_T": factors.u_t,
            "U_S": factors.u_s,
            "U_H": factors.u_h,
            "U_W": factors.u_w,
        }
        params = factors.param_count()
        sweeps = _sweeps_from_trace(trace, 1 if root is None else 4)
        ranks = [rank]
    elif method == "tucker2":
        r_t, r_s = plan.ranks
        if root is None:
            factors, trace = decomp.tucker2_als(k, r_t, r_s, als_cfg)
        else:
            factors, trace = decomp.tucker2_als_sigma(k, root, r_t, r_s, als_cfg)
        recon = tucker2_reconstruct(factors)
        arrays = {"U_T": factors.u_t, "U_S": factors.u_s, "G": factors.core}
        params = factors.param_count()
        sweeps = _sweeps_from_trace(trace, 1 if root is None else 3)
        ranks = [r_t, r_s]
    else:
        rank = plan.ranks[0]
        factors, recon_mat, arrays = _compress_matrix(matrix_view, root, rank, cfg)
        recon = recon_mat if layer.kind == "linear" else recon_mat.reshape(k.shape)
        params = factors.param_count()
        sweeps = 0
        ranks = [rank]

    out_dir = Path(cfg.out_dir)
    factor_files = {}
    for tag, arr in arrays.items():
        rel = f"{layer.name}.{tag}.npy"
        npyio.write_tensor(out_dir / rel, arr)
        factor_files[tag] = rel

    rel_fro = relative_recon_error(k, recon)
    rel_sigma = None
    func_err = None
    if root is not None:
        if layer.kind == "linear":
            diff_root = sigma_norm_matrix(k, recon, root)
            base_root = sigma_norm_matrix(k, np.zeros_like(k), root)
            rel_sigma = diff_root / base_root
        else:
            rel_sigma = relative_recon_error(k, recon, root)
    if layer.patches_file:
        patches = npyio.read_tensor(manifest.resolve(layer.patches_file))
        func_err = evaluate_functional_error(k, recon, patches)

    return {
        "name": layer.name,
        "kind": layer.kind,
        "skip": False,
        "method": method,
        "ranks": ranks,
        "vbmf_ranks": list(plan.vbmf_ranks),
        "max_ranks": list(plan.max_ranks),
        "sweeps_run": sweeps,
        "rel_error_frobenius": rel_fro,
        "rel_error_sigma": rel_sigma,
        "functional_error": func_err,
        "original_params": int(k.size),
        "compressed_params": int(params),
        "kernel_file": str(kernel_path),
        "sigma_file": str(manifest.resolve(layer.sigma_file)) if layer.sigma_file else None,
        "patches_file": str(manifest.resolve(layer.patches_file)) if layer.patches_file else None,
        "factor_files": factor_files,
    }


def sigma_norm_matrix(w, w_tilde, root: SigmaRoot) -> float:
    """Weighted distance ||(W - W~) @ L||_F for plain matrices."""
    diff = np.asarray(w, dtype=np.float64) - np.asarray(w_tilde, dtype=np.float64)
    if diff.shape[1] != root.dim:
        raise ValidationError(f"root dim {root.dim} != matrix columns {diff.shape[1]}")
    return float(np.linalg.norm(diff @ root.l))


def _skipped_entry(manifest: ModelManifest, layer: LayerEntry) -> dict:
    kernel_path = manifest.resolve(layer.kernel_file)
    shape, _ = npyio.read_header(kernel_path)
    size = int(np.prod(shape))
    return {
        "name": layer.name,
        "kind": layer.kind,
        "skip": True,
        "original_params": size,
        "compressed_params": size,
        "kernel_file": str(kernel_path),
    }


def compress_model(manifest: ModelManifest, cfg: CompressConfig) -> dict:
    """Compress every non-skipped layer and assemble the report.

    Deterministic given the manifest, config and seed (wall time aside).
    A failing layer aborts the run; the raised :class:`CompressionError`
    carries a report of the layers completed before the failure.
    """
    if cfg.norm == "sigma":
        for layer in manifest.layers:
            if not layer.skip and not (layer.patches_file or layer.sigma_file):
                raise ValidationError(
                    f"layer {layer.name}: norm=sigma requires patches_file or sigma_file "
                    "(add one to the manifest or run with --norm frobenius)"
                )
    started = time.monotonic()
    jobs = int(os.environ.get("SIGMA_LOWRANK_THREADS", cfg.jobs))
    work = [layer for layer in manifest.layers if not layer.skip]

    results: dict[str, dict] = {}
    failure: tuple[str, Exception] | None = None
    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_compress_layer, manifest, lay, cfg): lay for lay in work}
            for fut, lay in futures.items():
                try:
                    results[lay.name] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported via CompressionError
                    if failure is None:
                        failure = (lay.name, exc)
    else:
        for lay in work:
            try:
                results[lay.name] = _compress_layer(manifest, lay, cfg)
            except Exception as exc:  # noqa: BLE001
                failure = (lay.name, exc)
                break

    entries = []
    for layer in manifest.layers:
        if layer.skip:
            entries.append(_skipped_entry(manifest, layer))
        elif layer.name in results:
            entries.append(results[layer.name])

    orig = sum(e["original_params"] for e in entries)
    comp = sum(e["compressed_params"] for e in entries)
    report = {
        "schema": REPORT_SCHEMA,
        "model": manifest.model,
        "config": {
            "method": cfg.method,
            "norm": cfg.norm,
            "alpha": cfg.alpha,
            "epsilon": cfg.epsilon,
            "sweeps": cfg.sweeps,
            "tol": cfg.tol,
            "seed": cfg.seed,
        },
        "layers": entries,
        "totals": {
            "original_params": orig,
            "compressed_params": comp,
            "compression_ratio": (orig / comp) if comp else None,
            "wall_time_s": time.monotonic() - started,
        },
    }
    if failure is not None:
        name, exc = failure
        report["failed_layer"] = {"name": name, "error": str(exc)}
        raise CompressionError(f"layer {name} failed: {exc}", report)
    return report


def _load_factors(report_layer: dict, out_dir: Path):
    files = report_layer["factor_files"]
    arrays = {tag: npyio.read_tensor(out_dir / rel) for tag, rel in files.items()}
    method = report_layer["method"]
    if method == "cp":
        f = CpFactors(arrays["U_T"], arrays["U_S"], arrays["U_H"], arrays["U_W"])
        return cp_reconstruct(f), f.param_count()
    if method == "tucker2":
        f = Tucker2Factors(arrays["G"], arrays["U_T"], arrays["U_S"])
        return tucker2_reconstruct(f), f.param_count()
    f = decomp.SvdFactors(arrays["A"], arrays["B"])
    return f.reconstruct(), f.param_count()


def verify_report(report_path, tol: float = 1e-10) -> list[str]:
    """Recompute every error and parameter count in a report from the
    emitted factor files; returns a list of discrepancies (empty = pass)."""
    report_path = Path(report_path)
    report = json.loads(report_path.read_text())
    problems: list[str] = []
    if report.get("schema") != REPORT_SCHEMA:
        return [f"unknown schema {report.get('schema')!r}"]
    out_dir = report_path.parent
    epsilon = report["config"]["epsilon"]
    orig_total = comp_total = 0
    for entry in report["layers"]:
        orig_total += entry["original_params"]
        comp_total += entry["compressed_params"]
        if entry.get("skip"):
            continue
        name = entry["name"]
        k = npyio.read_tensor(entry["kernel_file"])
        recon, params = _load_factors(entry, out_dir)
        if k.ndim == 4 and recon.ndim == 2:
            recon = recon.reshape(k.shape)
        if params != entry["compressed_params"]:
            problems.append(f"{name}: params {params} != reported {entry['compressed_params']}")
        if int(k.size) != entry["original_params"]:
            problems.append(f"{name}: original size {k.size} != {entry['original_params']}")
        rel_fro = relative_recon_error(k, recon)
        if abs(rel_fro - entry["rel_error_frobenius"]) > tol * max(1.0, rel_fro):
            problems.append(f"{name}: frobenius error {rel_fro} != {entry['rel_error_frobenius']}")
        if entry.get("rel_error_sigma") is not None:
            solve_cfg = SymSolveConfig(epsilon_scale=epsilon)
            if entry.get("sigma_file"):
                sigma = npyio.read_tensor(entry["sigma_file"])
            else:
                patches = npyio.read_tensor(entry["patches_file"])
                sigma = estimate_sigma([patches]).finalize("mean")
            root = sigma_root_from_matrix(sigma, solve_cfg)
            if entry["kind"] == "linear":
                rel_sig = sigma_norm_matrix(k, recon, root) / sigma_norm_matrix(
                    k, np.zeros_like(k), root
                )
            else:
                rel_sig = relative_recon_error(k, recon, root)
            if abs(rel_sig - entry["rel_error_sigma"]) > tol * max(1.0, rel_sig):
                problems.append(f"{name}: sigma error {rel_sig} != {entry['rel_error_sigma']}")
        if entry.get("functional_error") is not None:
            patches = npyio.read_tensor(entry["patches_file"])
            func = evaluate_functional_error(k, recon, patches)
            if abs(func - entry["functional_error"]) > tol * max(1.0, func):
                problems.append(f"{name}: functional error {func} != {entry['functional_error']}")
    totals = report["totals"]
    if totals["original_params"] != orig_total or totals["compressed_params"] != comp_total:
        problems.append("totals do not match layer sums")
    if comp_total:
        ratio = orig_total / comp_total
        if abs(ratio - totals["compression_ratio"]) > 1e-12 * max(1.0, ratio):
            problems.append("compression ratio mismatch")
    return problems
