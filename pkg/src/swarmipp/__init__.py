"""Multi-UAV informative path planning with noisy communication, denoising
sensor fusion, and counterfactual multi-agent policy-gradient training."""

__version__ = "0.1.0"
