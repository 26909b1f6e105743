"""Time-fractional gradient flows for difference-of-convex energies.

Subpackages mirror the pipeline: ``kernels`` (Sonine pairs and product
integration), ``convex`` (functionals, resolvents, Moreau-Yosida),
``solver`` (trajectory stepping), ``certify`` (inequality certificates and
oracles), ``plaplace`` (the p-Laplace subdiffusion application) and ``cli``.
"""

from ._accel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
