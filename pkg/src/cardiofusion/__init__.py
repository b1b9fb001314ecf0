"""Multimodal cardiovascular classification from ECG and fundus images.

Pipeline: ECG preprocessing and beat segmentation, 1D/2D spectral
transforms, earth mover's distance fusion against class templates, a small
trainable classifier over the four ECG x fundus classes, evaluation
metrics, ANOVA feature significance, and wavelet/HOG comparison baselines,
plus a deterministic synthetic data generator for end-to-end validation.
"""

__version__ = "0.1.0"

from . import baselines, dataio, ecg, emd, errors, evaluate, network, spectral, synth

__all__ = [
    "__version__",
    "baselines",
    "dataio",
    "ecg",
    "emd",
    "errors",
    "evaluate",
    "network",
    "spectral",
    "synth",
]
