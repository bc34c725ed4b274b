"""Model registry: small reference CNNs plus torchvision lookups by name."""

from __future__ import annotations

import torch
from torch import nn


class Toy2(nn.Module):
    """Two stride-1 convolutions and a classifier head."""

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 4, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(4, 6, kernel_size=3)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(6, num_classes)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        return self.fc(self.pool(x).flatten(1))


class Toy3(nn.Module):
    """Three-convolution variant with a mid-network 1x1 bottleneck."""

    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(8, 4, kernel_size=1)
        self.conv3 = nn.Conv2d(4, 8, kernel_size=3, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(8, num_classes)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = torch.relu(self.conv3(x))
        return self.fc(self.pool(x).flatten(1))


_REGISTRY = {"toy2": Toy2, "toy3": Toy3}


def build_model(model_id: str, seed: int = 0) -> nn.Module:
    """Instantiate a registry model or a torchvision architecture by name.

    torchvision models are built with random weights (no download), which
    is enough to exercise the export paths offline.
    """
    torch.manual_seed(seed)
    if model_id in _REGISTRY:
        model = _REGISTRY[model_id]()
    else:
        import torchvision.models

        factory = getattr(torchvision.models, model_id, None)
        if factory is None:
            raise ValueError(f"unknown model {model_id!r}")
        model = factory(weights=None)
    model.eval()
    return model


def compressible_layers(model: nn.Module) -> list[tuple[str, nn.Module]]:
    """Named stride-1 Conv2d and Linear modules, in forward order."""
    out = []
    for name, module in model.named_modules():
        if isinstance(module, nn.Conv2d):
            if module.stride == (1, 1) and module.dilation == (1, 1) and module.groups == 1:
                out.append((name, module))
        elif isinstance(module, nn.Linear):
            out.append((name, module))
    return out
