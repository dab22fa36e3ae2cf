"""rfsr: cost-and-quality controllable arbitrary-scale super-resolution.

A single trained model reconstructs the super-resolved residual as a sum of
sequentially predicted Fourier components; choosing how many components to
evaluate at test time trades compute for quality.
"""

__version__ = "0.1.0"
