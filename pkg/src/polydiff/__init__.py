"""Multimodal diffusion on product state spaces with decoupled noise clocks.

Trains and samples score-based generative models natively on
Euclidean x token products (and SO(3) x labels), driven by one model with
an independent noise time per modality.  See the README for the CLI and
the verification suite.
"""

__version__ = "0.1.0"
