"""Closed-loop experiment engine: config, cycles, simulation, metrics, sweeps,
CLI, and the real-time human-in-the-loop service."""
