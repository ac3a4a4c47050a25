"""Paired-comparison inference.

Fits independent-data paired-comparison models (linear and cumulative link)
and Thurstonian dependent models by full maximum likelihood, limited
information and pairwise likelihood, with low-order-marginal fit statistics
and a seedable simulation harness.
"""

__version__ = "0.1.0"
