"""
ebmlife - energy-based model training across shortrun, midrun and longrun
MCMC regimes, with oracle checks on tractable toy densities.
"""
__version__ = "0.1.0"
