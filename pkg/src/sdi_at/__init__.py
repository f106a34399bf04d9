"""SDI-regularized adversarial training for small softmax classifiers."""

__version__ = "0.1.0"
