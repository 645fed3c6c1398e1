"""Numerical Cowen-Douglas toolkit: kernel atoms, bundle curvature,
projection identities, similarity diagnostics and module maps."""
__version__ = "0.1.0"
