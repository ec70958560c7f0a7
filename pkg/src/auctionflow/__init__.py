"""Auction traffic simulation and bid-optimization toolkit.

Submodules:
  point_process       point-pattern generators (Poisson, superposition, Cox)
  poisson_diagnostics approximation bounds and Poisson-ness diagnostics
  auction_core        opportunity model, expected and simulated totals
  bid_optimizer       optimal actions, bid-equation solvers, budget pacing
  experiment_harness  synthetic landscape generators and experiment runners
  cli                 configuration-driven command line entry point
"""

__version__ = "0.1.0"
