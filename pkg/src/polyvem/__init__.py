"""polyvem: effective electro-magneto-mechanical moduli of polycrystals.

First-order virtual elements on one-element-per-grain polyhedral meshes,
with linear/quadratic tetrahedral FEM baselines, Dirichlet homogenization
batteries, and error/stabilization studies.
"""

__version__ = "0.1.0"
