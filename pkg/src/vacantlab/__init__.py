"""vacantlab: vacant-set laboratory for random walk on the discrete torus."""

__version__ = "0.1.0"
