"""Bridge from torch CNNs to the sigma-lowrank pipeline's file formats."""

from .export import (
    ExportJob,
    export_baseline_weights,
    export_kernels,
    export_patches,
    run_export,
)
from .models import build_model, compressible_layers

__version__ = "0.1.0"
