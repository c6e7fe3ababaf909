"""Constrained smooth interpolation and selection over finite point sets:
jet algebra, convex shape fields and their refinements, basis constructions,
dyadic decompositions with Whitney gluing, and finiteness-ratio experiments.
"""

__version__ = "0.1.0"
