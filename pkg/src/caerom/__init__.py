"""Low-dimensional parametrization of incompressible flow states: POD, CNN/CAE, clustering, LPV."""

__version__ = "0.1.0"
