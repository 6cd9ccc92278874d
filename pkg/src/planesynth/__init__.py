"""planesynth: a desk-scale lab for plane-stack view synthesis.

The package renders scenes represented as a stack of fronto-parallel RGB +
density planes, warps the stack into novel views with per-plane homographies,
places planes inside uniform disparity bins with learnable offsets, and fits
all of it to posed multi-view images with a small reverse-mode engine. It
also ships a block-sampling self-attention operator with a full-attention
oracle and the synthetic-scene harness used for the acceptance experiments.
"""

__version__ = "0.1.0"
