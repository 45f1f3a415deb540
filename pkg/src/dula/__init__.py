"""Decentralized unadjusted Langevin sampling simulator."""
