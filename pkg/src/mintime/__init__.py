"""Minimum time functions of differential inclusions: grid solver, nonsmooth
estimators, Hamiltonian flows and a sampled verification harness."""

__version__ = "0.1.0"
SCHEMA_VERSION = "1.0"
