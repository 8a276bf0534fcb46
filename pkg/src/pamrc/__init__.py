"""Parabolic Anderson model on lattice boxes with random edge conductances.

Submodules: ``lattice`` (boxes, fields, pocket scanning), ``environments``
(the four dynamic environments), ``walker`` (the conductance walk),
``feynman_kac`` (Monte Carlo moments, quenched solver, Green function),
``variational`` (moment operators and eigenvalues), ``lyapunov`` (exponent
pipeline and theorem probes), ``cli`` (command-line front end).
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
