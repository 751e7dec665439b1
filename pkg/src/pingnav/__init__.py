"""Adaptive navigation-instruction stack for simulated indoor walkers.

Subsystems:

- ``world``       floor plans, graph path planning, waypoints, polar surround features
- ``statespace``  state/action encodings and the polar velocity reparameterization
- ``neural``      minimal float64 LSTM/dense engine with BPTT and SGD momentum
- ``dynamics``    walker dynamics models (per-person, pooled, multi-head, weighted experts)
- ``walkersim``   parameterized simulated walkers, noisy localizer, particle filter
- ``planner``     path-following reward, sampling MPC, full agent loop
- ``metrics`` / ``experiments`` / ``cli``  evaluation harness and entry points
"""

__version__ = "0.1.0"
