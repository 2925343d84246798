"""Pseudo-spectral simulator and verification harness for incompressible
isotropic viscoelasticity in perturbation form."""

__version__ = "0.1.0"
