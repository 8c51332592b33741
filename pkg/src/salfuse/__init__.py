"""Gate-regulated RGB-D salient object detection, self-contained.

The package bundles a small reverse-mode autodiff engine (salfuse.tensor),
the two-phase gated fusion network (salfuse.fusion, salfuse.attention,
salfuse.blocks), BCE+IoU supervision (salfuse.losses), a full SOD metric
suite (salfuse.metrics) and the file/CLI plumbing around them.
"""

from salfuse.tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "backward", "__version__"]
