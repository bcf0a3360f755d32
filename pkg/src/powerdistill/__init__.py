"""Algorithm distillation workbench for sum-rate power control.

Classical solvers (WMMSE, FPLinQ) label interference networks; neural students
(MLP, GNN) are trained supervised, unsupervised, or by deterministic policy
gradient, optionally regularized toward the teacher allocations.
"""

__version__ = "0.1.0"
