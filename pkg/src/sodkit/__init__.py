"""sodkit: a CPU mini-framework for U-shape salient object detection
with parameter-shared cross-scale interactors."""

__version__ = "0.1.0"

from .tensor import Parameter, Tensor, no_grad  # noqa: F401
