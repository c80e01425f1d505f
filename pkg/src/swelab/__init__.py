"""Wave propagation laboratory for a mixed finite element pair.

Velocity lives in elementwise-linear discontinuous 2-vectors, the surface
elevation in continuous quadratics, on doubly periodic triangulations of
the plane.  The package provides the discrete Helmholtz decomposition,
linear rotating shallow-water dynamics, and lattice dispersion analysis
for that pair.
"""

__version__ = "0.1.0"
