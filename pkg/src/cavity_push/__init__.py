"""Cold-atom delivery into a high-finesse cavity: cavity-QED steady states,
transport Monte Carlo, in-mode stochastic trajectories and the
photon-count analysis chain."""

__version__ = "0.1.0"
