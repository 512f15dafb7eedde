"""End-to-end simulation of a single OFDM symbol through the channel.

Shared by the training loop and the benchmark harness so that both see
exactly the same transmit chain: modulated spectrum -> 1/N IDFT -> cyclic
prefix -> time-varying channel -> optional receiver-side magnitude
clipping -> additive noise -> prefix removal -> DFT.
"""

from __future__ import annotations

import numpy as np

from . import signal as sig
from .channel import Cir, apply_channel
from .noise import NoiseSpec, sample_noise

__all__ = ["reference_signal_power", "simulate_symbol"]


def reference_signal_power(cfg: sig.OfdmConfig) -> float:
    """Average time-domain power of one transmitted symbol.

    Unit-energy subcarrier symbols under the 1/N-scaled transmit transform
    give exactly 1/N average power; noise levels are set against this
    deterministic reference so a requested SNR equals the per-subcarrier
    symbol SNR after the receive DFT.
    """
    return 1.0 / cfg.n_subcarriers


def simulate_symbol(spectrum: np.ndarray, cir: Cir, cfg: sig.OfdmConfig,
                    noise_spec: NoiseSpec, snr_db: float, rng: np.random.Generator,
                    clip_ratio: float | None = None) -> np.ndarray:
    """Received frequency-domain vector Y for one transmitted spectrum.

    clip_ratio, when given, clips the channel output magnitude at
    clip_ratio times its RMS amplitude before noise is added (a saturating
    receiver front end).  Returns the length-N complex vector Y.
    """
    s_freq = sig.ComplexSignal(np.asarray(spectrum, dtype=np.complex128), sig.Domain.FREQUENCY)
    s_time = sig.ifft_tx(s_freq, cfg)
    s_cp = sig.add_cp(s_time, cfg)
    y = apply_channel(s_cp, cir, cfg)
    if clip_ratio is not None:
        y = sig.clip(y, sig.clip_threshold(y, clip_ratio))
    z = sample_noise(noise_spec, cfg.symbol_len, reference_signal_power(cfg), rng, snr_db=snr_db)
    y = sig.ComplexSignal(y.samples + z, sig.Domain.TIME)
    y_body = sig.remove_cp(y, cfg)
    return sig.fft_rx(y_body, cfg).samples
