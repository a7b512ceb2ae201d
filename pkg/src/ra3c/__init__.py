"""Asynchronous advantage actor-critic for end-to-end driving in a procedural racing simulator.

Everything is built on numpy: a small reverse-mode autodiff engine, a
CNN+LSTM policy, a 2D car simulator with a front-view rasterizer, an
A3C trainer, a TCP env/parameter-server pair and the evaluation tooling.
"""

__version__ = "0.1.0"
