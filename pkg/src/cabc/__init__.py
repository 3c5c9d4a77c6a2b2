"""Compressed absorbing boundary conditions for the 2-D Helmholtz equation.

Two-step compression of the exterior Dirichlet-to-Neumann map: recover an
expansion of each edge-to-edge block from a few random exterior solves
(matrix probing), then compress the recovered blocks into partitioned
low-rank form for fast application inside a Helmholtz solver.

Submodules: ``medium``, ``helmholtz``, ``dtn``, ``probing``, ``plr``,
``analysis``, ``solver``, ``experiments``, ``cli``.
"""

__version__ = "0.1.0"
