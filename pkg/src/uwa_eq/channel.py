"""Doubly-selective multipath channel modelling.

A channel impulse response (CIR) is a matrix h(n, l): tap l as seen at
time sample n.  Applying it to a cyclic-prefixed waveform and moving to
the frequency domain yields the linear model Y = H S + Z, where H is the
N x N frequency-domain channel matrix.  Time variation within one symbol
spreads energy off the diagonal of H (inter-carrier interference); a
time-invariant channel gives a perfectly diagonal H.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .signal import ComplexSignal, Domain, OfdmConfig, to_stacked_real

__all__ = [
    "Cir",
    "CirFormatError",
    "FreqChannelMatrix",
    "SlidingPlan",
    "SynthCirParams",
    "SINUSOIDS_PER_TAP",
    "apply_channel",
    "time_matrix",
    "freq_matrix",
    "quasi_static_collapse",
    "perturb_csi",
    "make_sliding_plan",
    "extract_blocks",
    "split_vector",
    "join_vector",
    "synth_cir",
    "save_cir",
    "load_cir",
    "band_energy_fraction",
    "block_energy_fraction",
]


class CirFormatError(ValueError):
    """Raised when a CIR file cannot be parsed."""


@dataclass(frozen=True)
class Cir:
    """Channel impulse response: taps[n, l] is tap l at time sample n."""

    taps: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.taps, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"taps must be a non-empty (n_samples, n_taps) matrix, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("taps contain non-finite values")
        object.__setattr__(self, "taps", arr)

    @property
    def sample_count(self) -> int:
        return self.taps.shape[0]

    @property
    def tap_count(self) -> int:
        return self.taps.shape[1]


class FreqChannelMatrix:
    """Frequency-domain channel matrix with a lazily built stacked-real view."""

    def __init__(self, h_freq: np.ndarray):
        h = np.asarray(h_freq, dtype=np.complex128)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 1:
            raise ValueError(f"h_freq must be a square matrix, got {h.shape}")
        self.h_freq = h

    @property
    def n(self) -> int:
        return self.h_freq.shape[0]

    @cached_property
    def stacked(self) -> np.ndarray:
        return to_stacked_real(self.h_freq)


@dataclass(frozen=True)
class SlidingPlan:
    """Partition of N subcarriers into J contiguous blocks of equal size."""

    n: int
    block_size: int

    def __post_init__(self):
        if self.block_size < 1 or self.n < 1:
            raise ValueError("n and block_size must be positive")
        if self.n % self.block_size != 0:
            raise ValueError(
                f"block_size {self.block_size} does not divide n_subcarriers {self.n}"
            )

    @property
    def block_count(self) -> int:
        return self.n // self.block_size

    @property
    def boundaries(self) -> tuple[tuple[int, int], ...]:
        b = self.block_size
        return tuple((j * b, (j + 1) * b) for j in range(self.block_count))

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(lo, hi) for lo, hi in self.boundaries)


def make_sliding_plan(n: int, block_size: int) -> SlidingPlan:
    """Build the non-overlapping block partition used by block equalizers."""
    return SlidingPlan(n=n, block_size=block_size)


def apply_channel(s_cp: ComplexSignal, cir: Cir, cfg: OfdmConfig) -> ComplexSignal:
    """Pass a cyclic-prefixed waveform through the time-varying channel.

    y(n) = sum_l h(n, l) * s_cp(n - l), with s_cp treated as zero for
    negative indices.  Requires cp_len >= tap_count - 1 so that the symbol
    body sees no inter-symbol interference.
    """
    if s_cp.domain is not Domain.TIME:
        raise ValueError("apply_channel expects a time-domain signal")
    if len(s_cp) != cfg.symbol_len:
        raise ValueError(f"expected {cfg.symbol_len} samples, got {len(s_cp)}")
    if cir.sample_count != cfg.symbol_len:
        raise ValueError(
            f"CIR covers {cir.sample_count} time samples but the waveform has {cfg.symbol_len}"
        )
    if cfg.cp_len < cir.tap_count - 1:
        raise ValueError(
            f"cp_len {cfg.cp_len} is shorter than tap_count-1 = {cir.tap_count - 1}"
        )
    s = s_cp.samples
    y = np.zeros_like(s)
    for l in range(cir.tap_count):
        if l == 0:
            y += cir.taps[:, 0] * s
        else:
            y[l:] += cir.taps[l:, l] * s[:-l]
    return ComplexSignal(y, Domain.TIME)


def time_matrix(cir: Cir, cfg: OfdmConfig) -> np.ndarray:
    """N x N time-domain matrix equivalent of CP add / channel / CP removal.

    M[n, (n - l) mod N] = h(n + cp_len, l), so that
    remove_cp(apply_channel(add_cp(s))) == M @ s for every length-N s.
    """
    n = cfg.n_subcarriers
    if cir.sample_count != cfg.symbol_len:
        raise ValueError(
            f"CIR covers {cir.sample_count} time samples but the config needs {cfg.symbol_len}"
        )
    if cfg.cp_len < cir.tap_count - 1:
        raise ValueError(
            f"cp_len {cfg.cp_len} is shorter than tap_count-1 = {cir.tap_count - 1}"
        )
    m = np.zeros((n, n), dtype=np.complex128)
    rows = np.arange(n)
    for l in range(cir.tap_count):
        m[rows, (rows - l) % n] += cir.taps[rows + cfg.cp_len, l]
    return m


def freq_matrix(cir: Cir, cfg: OfdmConfig) -> FreqChannelMatrix:
    """Frequency-domain channel matrix H = F M F^-1.

    F is the unscaled forward DFT (the receive transform), so
    fft_rx(remove_cp(apply_channel(add_cp(ifft_tx(S))))) == H @ S.
    """
    m = time_matrix(cir, cfg)
    h = np.fft.ifft(np.fft.fft(m, axis=0), axis=1)
    return FreqChannelMatrix(h)


def quasi_static_collapse(cir: Cir) -> Cir:
    """Replace every tap trajectory by its time average.

    The collapsed channel is time-invariant, so its frequency matrix is
    diagonal.  Idempotent up to floating-point rounding of the mean.
    """
    mean_taps = cir.taps.mean(axis=0, keepdims=True)
    return Cir(np.broadcast_to(mean_taps, cir.taps.shape).copy())


def perturb_csi(cir: Cir, sigma: float, rng: np.random.Generator) -> Cir:
    """Receiver-side channel knowledge: each tap plus complex Gaussian error.

    Every tap entry gets independent noise with standard deviation sigma
    per real component.  sigma = 0 returns an identical copy (the rng is
    still consumed so that perturbations at different sigma values can be
    coupled by scaling one shared draw).
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    eps = rng.standard_normal(cir.taps.shape) + 1j * rng.standard_normal(cir.taps.shape)
    return Cir(cir.taps + sigma * eps)


def _as_matrix(h) -> np.ndarray:
    if isinstance(h, FreqChannelMatrix):
        return h.h_freq
    return np.asarray(h, dtype=np.complex128)


def extract_blocks(h, plan: SlidingPlan) -> list[np.ndarray]:
    """Diagonal B x B blocks of H; off-block entries are discarded."""
    m = _as_matrix(h)
    if m.shape != (plan.n, plan.n):
        raise ValueError(f"matrix shape {m.shape} does not match plan n={plan.n}")
    return [m[sl, sl].copy() for sl in plan.slices()]


def split_vector(v, plan: SlidingPlan) -> list[np.ndarray]:
    """Cut a length-N vector into the plan's J blocks."""
    a = np.asarray(v)
    if a.shape != (plan.n,):
        raise ValueError(f"vector shape {a.shape} does not match plan n={plan.n}")
    return [a[sl].copy() for sl in plan.slices()]


def join_vector(parts, plan: SlidingPlan) -> np.ndarray:
    """Inverse of split_vector; parts must arrive in block order."""
    parts = list(parts)
    if len(parts) != plan.block_count:
        raise ValueError(f"expected {plan.block_count} blocks, got {len(parts)}")
    for i, p in enumerate(parts):
        if np.asarray(p).shape != (plan.block_size,):
            raise ValueError(f"block {i} has shape {np.asarray(p).shape}, "
                             f"expected ({plan.block_size},)")
    return np.concatenate([np.asarray(p) for p in parts])


SINUSOIDS_PER_TAP = 8


@dataclass(frozen=True)
class SynthCirParams:
    """Synthetic channel family: exponential delay profile, sum-of-sinusoids fading.

    doppler_spread is the maximum tap oscillation frequency in cycles per
    sample; 0 gives a static channel.  delay_power_decay_db is the power
    drop per tap in dB; tap powers are normalised to unit total mean power.
    """

    tap_count: int
    delay_power_decay_db: float = 2.0
    doppler_spread: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.tap_count < 1:
            raise ValueError(f"tap_count must be >= 1, got {self.tap_count}")
        if self.delay_power_decay_db < 0:
            raise ValueError("delay_power_decay_db must be non-negative")
        if self.doppler_spread < 0:
            raise ValueError("doppler_spread must be non-negative")


def synth_cir(params: SynthCirParams, n_samples: int, rng: np.random.Generator) -> Cir:
    """Draw one random CIR realisation of length n_samples.

    Each tap is a sum of SINUSOIDS_PER_TAP complex sinusoids with random
    frequencies uniform in [-doppler_spread, doppler_spread] and random
    phases, scaled so the ensemble mean power per tap follows the
    exponential decay profile and sums to one.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    L = params.tap_count
    profile = 10.0 ** (-params.delay_power_decay_db * np.arange(L) / 10.0)
    profile /= profile.sum()
    t = np.arange(n_samples)
    taps = np.empty((n_samples, L), dtype=np.complex128)
    k = SINUSOIDS_PER_TAP
    for l in range(L):
        freqs = rng.uniform(-params.doppler_spread, params.doppler_spread, k)
        phases = rng.uniform(0.0, 2.0 * np.pi, k)
        amp = np.sqrt(profile[l] / k)
        # (n_samples, k) phase grid summed over the sinusoid axis
        arg = 2.0 * np.pi * t[:, None] * freqs[None, :] + phases[None, :]
        taps[:, l] = amp * np.exp(1j * arg).sum(axis=1)
    return Cir(taps)


_MAGIC = b"UCIR"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def save_cir(cir: Cir, path) -> None:
    """Write a CIR to disk; '.csv' paths get the text variant, others binary."""
    path = str(path)
    if path.endswith(".csv"):
        n, L = cir.taps.shape
        with open(path, "w", encoding="ascii") as f:
            f.write("n,l,re,im\n")
            for i in range(n):
                for l in range(L):
                    v = cir.taps[i, l]
                    f.write(f"{i},{l},{v.real:.17g},{v.imag:.17g}\n")
        return
    payload = cir.taps.astype("<c8").tobytes()
    header = _HEADER.pack(_MAGIC, _VERSION, cir.sample_count, cir.tap_count)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def _load_cir_csv(path: str) -> Cir:
    with open(path, "r", encoding="ascii") as f:
        text = f.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].lstrip().lower().startswith("n"):
        lines = lines[1:]
    if not lines:
        raise CirFormatError(f"{path}: no data rows")
    try:
        data = np.loadtxt(io.StringIO("\n".join(lines)), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise CirFormatError(f"{path}: cannot parse csv rows: {exc}") from exc
    if data.shape[1] != 4:
        raise CirFormatError(f"{path}: expected 4 columns (n,l,re,im), found {data.shape[1]}")
    ns = data[:, 0].astype(np.int64)
    ls = data[:, 1].astype(np.int64)
    if np.any(ns < 0) or np.any(ls < 0):
        raise CirFormatError(f"{path}: negative indices")
    n, L = int(ns.max()) + 1, int(ls.max()) + 1
    if data.shape[0] != n * L:
        raise CirFormatError(
            f"{path}: expected {n * L} rows for a {n} x {L} grid, found {data.shape[0]}"
        )
    taps = np.full((n, L), np.nan + 0j, dtype=np.complex128)
    taps[ns, ls] = data[:, 2] + 1j * data[:, 3]
    if np.any(np.isnan(taps.real)):
        raise CirFormatError(f"{path}: duplicate or missing (n, l) entries")
    if not np.all(np.isfinite(taps)):
        raise CirFormatError(f"{path}: non-finite tap values")
    return Cir(taps)


def load_cir(path) -> Cir:
    """Read a CIR written by save_cir (binary or csv)."""
    path = str(path)
    if path.endswith(".csv"):
        return _load_cir_csv(path)
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise CirFormatError(
            f"{path}: expected at least {_HEADER.size} header bytes, found {len(blob)}"
        )
    magic, version, n, L = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise CirFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise CirFormatError(f"{path}: unsupported version {version}, expected {_VERSION}")
    if n < 1 or L < 1:
        raise CirFormatError(f"{path}: header declares empty dimensions {n} x {L}")
    expected = n * L * 8
    got = len(blob) - _HEADER.size
    if got != expected:
        raise CirFormatError(f"{path}: expected {expected} payload bytes, found {got}")
    taps = np.frombuffer(blob, dtype="<c8", offset=_HEADER.size).reshape(n, L)
    taps = taps.astype(np.complex128)
    if not np.all(np.isfinite(taps)):
        raise CirFormatError(f"{path}: non-finite tap values")
    return Cir(taps)


def band_energy_fraction(h, width: int) -> float:
    """Fraction of |H|^2 within cyclic distance `width` of the main diagonal."""
    m = _as_matrix(h)
    n = m.shape[0]
    i, j = np.indices(m.shape)
    d = np.abs(i - j)
    d = np.minimum(d, n - d)
    e = np.abs(m) ** 2
    total = e.sum()
    if total == 0:
        return 0.0
    return float(e[d <= width].sum() / total)


def block_energy_fraction(h, plan: SlidingPlan) -> float:
    """Fraction of |H|^2 kept by the plan's diagonal blocks."""
    m = _as_matrix(h)
    if m.shape != (plan.n, plan.n):
        raise ValueError(f"matrix shape {m.shape} does not match plan n={plan.n}")
    e = np.abs(m) ** 2
    total = e.sum()
    if total == 0:
        return 0.0
    kept = sum(e[sl, sl].sum() for sl in plan.slices())
    return float(kept / total)
