"""Total uncertainty quantification for inverse PDE solutions obtained with
reduced-order KL-DNN surrogate models."""

__version__ = "0.1.0"
