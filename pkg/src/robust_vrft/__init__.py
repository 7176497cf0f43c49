"""Robust data-driven controller tuning with swarm optimizers."""
