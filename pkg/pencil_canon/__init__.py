"""
Pencil Canon - canonical structure of parameter-dependent matrix pencils

A toolkit for pencils A(x) + lambda*B(x) with singular coefficients:
- expression language for matrix-function entries
- spectral and rank profiling on a sample grid
- pointwise construction of the canonical form and the transforms P(x), Q(x)
- numerical verification with continuity diagnostics
- a generator of pencils with prescribed structure
"""

__version__ = "0.3.0"
