"""IR drop prediction workbench: synthetic layouts, a sparse-solver oracle,
directed PDN graphs and a dual-branch GNN/CNN predictor on a small
reverse-mode autodiff engine."""

from .autodiff import FORMAT_VERSION

__version__ = "0.1.0"

__all__ = ["FORMAT_VERSION", "__version__"]
