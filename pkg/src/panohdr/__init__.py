"""panohdr: recover outdoor HDR lighting from single LDR panoramas.

A small research stack: lat-long panorama model and IO, sun detection,
a two-headed convolutional autoencoder with its own reverse-mode autodiff,
a differentiable Lambertian render loss through a precomputed transport
matrix, procedural training data, classical inverse-tonemapping baselines,
evaluation metrics, and illumination-based retrieval.
"""

__version__ = "0.1.0"
