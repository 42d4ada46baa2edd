"""
deferkit

Adversarially robust one-stage learning-to-defer: cost-sensitive deferral
losses, outcome-specific attacks, robust trainers and brute-force
verification on small synthetic problems.
"""

__version__ = "0.1.0"
