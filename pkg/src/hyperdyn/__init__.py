"""Numerical laboratory for hyperbolic dynamics on the 2- and 3-torus.

Core objects: exact toral automorphisms and their splittings (``torus``),
pseudo-orbit shadowing (``shadowing``), grid representations of compact
invariant sets (``gridsets``), loop subgroups and bracket chains
(``lattice``), the derived-from-Anosov map with its foliations (``damap``),
the semiconjugacy to the linear base (``semiconj``), and subshift-of-finite-
type hulls (``symbolic``).  ``cli`` drives the named experiments.
"""

from .torus import ToralAutomorphism, classify

__all__ = ["ToralAutomorphism", "classify"]
__version__ = "0.1.0"
