"""kl-refinement: adaptive coarse grids combined with block-structured uniform
refinement, matrix-free multigrid and an FMG-based error estimator."""

__version__ = "0.1.0"
