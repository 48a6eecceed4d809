"""Single-step completion policies for continuous control.

Flow-matching policies with a completion head that jumps straight to the
data endpoint, an offline/online actor-critic built on top of them, and a
goal-conditioned variant that distills a two-level hierarchy into one
network evaluation. Everything runs on float64 numpy with a small
reverse-mode tape, so training and evaluation are deterministic per seed.
"""

__version__ = "0.1.0"
