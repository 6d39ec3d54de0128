"""Mixed-platoon control workbench.

Offline: identify a matrix-zonotope family of system models and a stabilizing
feedback gain from noisy trajectory data.  Online: tube-based data-enabled
predictive control with reachability-tightened constraints, plus known-model
MPC and plain data-enabled baselines, a nonlinear platoon simulator with
noise/attack injection, metrics, and a human-in-the-loop driving service.
"""

__version__ = "0.1.0"
