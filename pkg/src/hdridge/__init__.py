"""Ridge-type prediction under block-diagonal covariance: estimators, asymptotic theory, simulation."""

__version__ = "0.1.0"
