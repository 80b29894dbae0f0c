"""Constraint-aware SQL plan search.

Rule-based plan rewrites gated by a 6-bit configuration, UCB1 exploration over
the 64-arm plan space, a random-forest latency model that prunes the search,
and distilled students (softmax-linear and gradient-boosted trees) that pick a
plan in one shot.
"""

__version__ = "0.1.0"
