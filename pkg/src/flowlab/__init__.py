"""flowlab: exact Lie-algebra and ensemble-flow tools for control families of
neural-ODE type.

Modules
-------
polyvec    exact rational polynomials and polynomial vector fields
liealg     finite-slice Lie closures and membership certificates
families   control families (control-affine polynomial, resnet)
ensemble   ensemble lifts and rank certificates
flow       RK4 flows, Jacobians, blow-up detection, a-priori bounds
trainer    adjoint-gradient training of piecewise-constant controls
approx     L^p errors, volume floor and fixed-point checks
cli        command-line interface
"""
__version__ = "0.1.0"

from ._kernels import BACKEND_NAME  # noqa: E402,F401
