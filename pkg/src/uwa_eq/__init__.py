"""Baseband OFDM simulation and equalization toolkit.

Modules:

* signal     - QPSK/OFDM modem primitives and stacked-real helpers
* channel    - doubly-selective channel models, file formats, block plans
* noise      - Gaussian, heavy-tailed and recorded noise sources
* equalizers - zero-forcing, MMSE, decision feedback, exhaustive search
* udnet      - trainable unfolded block equalizer (hand-derived gradients)
* pipeline   - shared single-symbol transmit/receive simulation
* harness    - dataset generation, Monte-Carlo SER sweeps, CSV/plots
* config     - INI-style experiment configuration files
* cli        - the `uwa-eq` command line tool
"""

from . import channel, config, equalizers, harness, noise, pipeline, signal, udnet

__all__ = [
    "channel",
    "config",
    "equalizers",
    "harness",
    "noise",
    "pipeline",
    "signal",
    "udnet",
]

__version__ = "0.1.0"
