"""Depth-driven 3D feature injection for a toy diffusion action policy.

The package renders synthetic depth scenes, lifts them to point clouds,
encodes the clouds with a shared per-point MLP, and feeds the encoding
into a small transformer denoiser through zero-initialized scalar gates.
Everything runs on an in-package float64 autodiff tape so gradients are
checkable against finite differences to tight tolerances.
"""

__version__ = "0.1.0"
