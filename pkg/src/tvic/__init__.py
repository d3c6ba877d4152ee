"""Huberised total-variation denoising with infimal-convolution fidelities.

Semismooth Newton solvers for images corrupted by mixed noise:
salt & pepper plus Gaussian (``tvic-l1l2``) and Gaussian plus Poisson
(``tvic-l2kl``), along with the single-fidelity baselines.
"""
__version__ = "0.1.0"

from .fidelity import FidelityWeights  # noqa: E402
from .metrics import decompose, psnr  # noqa: E402
from .noise import NoiseSpec, corrupt  # noqa: E402
from .phantom import phantom  # noqa: E402
from .solvers import MODELS, SolveResult, SolverConfig, solve  # noqa: E402

__all__ = ["__version__", "FidelityWeights", "MODELS", "NoiseSpec", "SolveResult", "SolverConfig",
           "corrupt", "decompose", "phantom", "psnr", "solve"]
