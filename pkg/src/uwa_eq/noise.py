"""Additive noise sources for the receive chain.

SNR convention: a requested snr_db relates the average transmitted
time-domain signal power P to the total complex noise power per sample,
noise_power = P / 10**(snr_db / 10).  With the package's 1/N-scaled
transmit transform and unit-energy symbols, P = 1/N and the equivalent
per-subcarrier noise variance after the receive DFT equals
10**(-snr_db / 10), i.e. the frequency-domain symbol SNR in dB is the
requested snr_db itself.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .signal import ComplexSignal, Domain

__all__ = [
    "NoiseKind",
    "NoiseSpec",
    "awgn",
    "alpha_stable",
    "noise_from_file",
    "sample_noise",
]


class NoiseKind(enum.Enum):
    GAUSSIAN = "gaussian"
    ALPHA_STABLE = "alpha-stable"
    FILE = "file"


@dataclass(frozen=True)
class NoiseSpec:
    """Which noise source to inject and its shape parameters.

    snr_db is a default; sweep code overrides it per operating point.
    alpha/beta/scale apply to ALPHA_STABLE, path to FILE.
    """

    kind: NoiseKind = NoiseKind.GAUSSIAN
    snr_db: float = 25.0
    alpha: float = 1.5
    beta: float = 0.0
    scale: float = 1.0
    path: str | None = None

    def __post_init__(self):
        if self.kind is NoiseKind.ALPHA_STABLE:
            if not 0.0 < self.alpha <= 2.0:
                raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
            if not -1.0 <= self.beta <= 1.0:
                raise ValueError(f"beta must be in [-1, 1], got {self.beta}")
            if self.scale <= 0:
                raise ValueError(f"scale must be positive, got {self.scale}")
        if self.kind is NoiseKind.FILE and not self.path:
            raise ValueError("file noise needs a path")


def awgn(n: int, signal_power: float, snr_db: float, rng: np.random.Generator) -> ComplexSignal:
    """Circularly symmetric white Gaussian noise at the requested SNR.

    Total complex variance per sample is signal_power / 10**(snr_db/10),
    split evenly between the real and imaginary parts.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if signal_power <= 0:
        raise ValueError(f"signal_power must be positive, got {signal_power}")
    var = signal_power / 10.0 ** (snr_db / 10.0)
    std = np.sqrt(var / 2.0)
    z = std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return ComplexSignal(z, Domain.TIME)


def alpha_stable(n: int, alpha: float, beta: float, scale: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Real alpha-stable draws via the Chambers-Mallows-Stuck transform.

    alpha = 2 reduces to a Gaussian with standard deviation sqrt(2)*scale;
    alpha = 1, beta = 0 is a Cauchy with half-width `scale`.  Smaller alpha
    gives heavier tails (impulsive noise).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must be in (0, 2], got {alpha}")
    if not -1.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [-1, 1], got {beta}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, n)
    w = rng.exponential(1.0, n)
    if alpha == 1.0:
        half_pi = np.pi / 2.0
        x = (2.0 / np.pi) * (
            (half_pi + beta * u) * np.tan(u)
            - beta * np.log((half_pi * w * np.cos(u)) / (half_pi + beta * u))
        )
    else:
        ta = np.tan(np.pi * alpha / 2.0)
        b0 = np.arctan(beta * ta) / alpha
        s0 = (1.0 + (beta * ta) ** 2) ** (1.0 / (2.0 * alpha))
        x = (
            s0
            * np.sin(alpha * (u + b0))
            / np.cos(u) ** (1.0 / alpha)
            * (np.cos(u - alpha * (u + b0)) / w) ** ((1.0 - alpha) / alpha)
        )
    return scale * x


def noise_from_file(path, n: int, signal_power: float, snr_db: float,
                    rng: np.random.Generator) -> ComplexSignal:
    """Noise resampled from a recording and rescaled to the requested SNR.

    A random contiguous window of n samples is taken from the file, its
    mean removed, and its amplitude scaled so the empirical power equals
    signal_power / 10**(snr_db/10) exactly.  Raw files hold little-endian
    float32 real samples; '.csv' files hold two columns (re, im).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if signal_power <= 0:
        raise ValueError(f"signal_power must be positive, got {signal_power}")
    path = str(path)
    if path.endswith(".csv"):
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected 2 columns (re, im), found {data.shape[1]}")
        samples = data[:, 0] + 1j * data[:, 1]
    else:
        samples = np.fromfile(path, dtype="<f4").astype(np.complex128)
    if samples.size < n:
        raise ValueError(f"{path}: file holds {samples.size} samples, need {n}")
    start = int(rng.integers(0, samples.size - n + 1))
    window = samples[start:start + n] - samples[start:start + n].mean()
    power = float(np.mean(np.abs(window) ** 2))
    if power == 0.0:
        raise ValueError(f"{path}: degenerate noise file (constant window after mean removal)")
    target = signal_power / 10.0 ** (snr_db / 10.0)
    window = window * np.sqrt(target / power)
    return ComplexSignal(window, Domain.TIME)


def sample_noise(spec: NoiseSpec, n: int, signal_power: float,
                 rng: np.random.Generator, snr_db: float | None = None) -> np.ndarray:
    """Draw complex noise samples for one symbol according to a NoiseSpec.

    snr_db overrides spec.snr_db when given.  Alpha-stable noise is applied
    independently to the real and imaginary parts and then rescaled so the
    empirical window power meets the SNR target, mirroring the file-based
    path (for alpha < 2 the ensemble power is unbounded, so the empirical
    window power is the only meaningful normalisation).
    """
    snr = spec.snr_db if snr_db is None else snr_db
    if spec.kind is NoiseKind.GAUSSIAN:
        return awgn(n, signal_power, snr, rng).samples
    if spec.kind is NoiseKind.FILE:
        return noise_from_file(spec.path, n, signal_power, snr, rng).samples
    re = alpha_stable(n, spec.alpha, spec.beta, spec.scale, rng)
    im = alpha_stable(n, spec.alpha, spec.beta, spec.scale, rng)
    z = re + 1j * im
    power = float(np.mean(np.abs(z) ** 2))
    if power == 0.0:
        raise ValueError("degenerate alpha-stable draw")
    target = signal_power / 10.0 ** (snr / 10.0)
    return z * np.sqrt(target / power)
