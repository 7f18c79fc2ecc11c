"""Bitwise neural networks: compressed real-valued pretraining, noisy
backpropagation over ternary weights, and XNOR/popcount inference."""

__version__ = "0.1.0"
