"""Baseband QPSK/OFDM modem primitives.

Conventions used by the whole package:

* The transmit transform is the 1/N-scaled inverse DFT and the receive
  transform is the unscaled forward DFT, so ``fft_rx(ifft_tx(x)) == x``.
  Under this pairing a unit-energy frequency-domain symbol has average
  time-domain power 1/N.
* QPSK symbols are Gray coded with unit average energy; the four points,
  in index order, are (1+1j, -1+1j, -1-1j, 1-1j) / sqrt(2).
* "Stacked real" form puts real parts in the first half of a vector and
  imaginary parts in the second half.  A complex matrix maps to the
  block matrix [[Re, -Im], [Im, Re]], which makes complex matrix-vector
  products commute with the representation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Domain",
    "OfdmConfig",
    "ComplexSignal",
    "Constellation",
    "ConstellationKind",
    "QPSK",
    "qpsk_modulate",
    "qpsk_demodulate_hard",
    "ifft_tx",
    "fft_rx",
    "add_cp",
    "remove_cp",
    "clip",
    "clip_threshold",
    "to_stacked_real",
    "from_stacked_real",
    "one_hot_encode",
    "one_hot_demap_hard",
    "one_hot_demap_soft",
    "ser",
]


class Domain(enum.Enum):
    TIME = "time"
    FREQUENCY = "frequency"


class ConstellationKind(enum.Enum):
    QPSK = "qpsk"


@dataclass(frozen=True)
class OfdmConfig:
    """Static modem parameters shared by transmitter and receiver."""

    n_subcarriers: int
    cp_len: int
    constellation: ConstellationKind = ConstellationKind.QPSK

    def __post_init__(self):
        n, cp = self.n_subcarriers, self.cp_len
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"n_subcarriers must be a power of two >= 2, got {n}")
        if not 0 <= cp < n:
            raise ValueError(f"cp_len must satisfy 0 <= cp_len < n_subcarriers, got {cp}")

    @property
    def symbol_len(self) -> int:
        return self.n_subcarriers + self.cp_len


@dataclass(frozen=True)
class ComplexSignal:
    """A 1-D complex sample vector tagged with its domain."""

    samples: np.ndarray
    domain: Domain

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("samples must be a non-empty 1-D vector")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size


def _samples(x) -> np.ndarray:
    """Accept a ComplexSignal or a bare array and return complex samples."""
    if isinstance(x, ComplexSignal):
        return x.samples
    return np.asarray(x, dtype=np.complex128)


def _require_domain(x: ComplexSignal, domain: Domain, op: str) -> None:
    if x.domain is not domain:
        raise ValueError(f"{op} expects a {domain.value}-domain signal, got {x.domain.value}")


@dataclass(frozen=True)
class Constellation:
    """A small complex alphabet together with its one-hot encoding basis."""

    points: np.ndarray
    one_hot: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.complex128)
        oh = np.asarray(self.one_hot, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("constellation needs at least two points")
        if len(set(pts.tolist())) != pts.size:
            raise ValueError("constellation points must be distinct")
        mags = np.abs(pts)
        if not np.allclose(mags, mags[0], rtol=0, atol=1e-12):
            raise ValueError("constellation points must have equal magnitude")
        if oh.shape != (pts.size, pts.size) or not np.array_equal(oh, np.eye(pts.size)):
            raise ValueError("one_hot must be the identity basis")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "one_hot", oh)

    @property
    def size(self) -> int:
        return self.points.size

    def nearest_index(self, symbols) -> np.ndarray:
        """Index of the closest point for each symbol; ties go to the lowest index."""
        s = np.asarray(symbols, dtype=np.complex128)
        d2 = np.abs(s[..., None] - self.points) ** 2
        return np.argmin(d2, axis=-1)

    def soft_demap(self, probs: np.ndarray) -> np.ndarray:
        """Probability-weighted mean of the points along the last axis."""
        return np.asarray(probs, dtype=np.float64) @ self.points


QPSK = Constellation(
    points=np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0),
    one_hot=np.eye(4),
)

# Gray map: bit pair (b0, b1) -> point index, and its inverse.
_PAIR_TO_INDEX = np.array([0, 1, 3, 2], dtype=np.int64)
_INDEX_TO_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.int64)


def qpsk_modulate(bits, constellation: Constellation = QPSK) -> ComplexSignal:
    """Map an even-length bit vector to Gray-coded QPSK symbols.

    Bits are consumed in pairs; (0, 0) maps to (1+1j)/sqrt(2) and adjacent
    points differ in exactly one bit.
    """
    b = np.asarray(bits, dtype=np.int64)
    if b.ndim != 1 or b.size == 0 or b.size % 2 != 0:
        raise ValueError(f"bit vector must be non-empty with even length, got shape {b.shape}")
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    pairs = b.reshape(-1, 2)
    idx = _PAIR_TO_INDEX[pairs[:, 0] * 2 + pairs[:, 1]]
    return ComplexSignal(constellation.points[idx], Domain.FREQUENCY)


def qpsk_demodulate_hard(symbols, constellation: Constellation = QPSK) -> np.ndarray:
    """Nearest-point hard decision back to the Gray-coded bit vector."""
    idx = constellation.nearest_index(_samples(symbols))
    return _INDEX_TO_BITS[idx].reshape(-1)


def ifft_tx(spectrum: ComplexSignal, cfg: OfdmConfig) -> ComplexSignal:
    """1/N-scaled inverse DFT taking one frequency-domain symbol to time."""
    _require_domain(spectrum, Domain.FREQUENCY, "ifft_tx")
    if len(spectrum) != cfg.n_subcarriers:
        raise ValueError(f"expected {cfg.n_subcarriers} subcarriers, got {len(spectrum)}")
    return ComplexSignal(np.fft.ifft(spectrum.samples), Domain.TIME)


def fft_rx(waveform: ComplexSignal, cfg: OfdmConfig) -> ComplexSignal:
    """Unscaled forward DFT, the exact inverse of ifft_tx."""
    _require_domain(waveform, Domain.TIME, "fft_rx")
    if len(waveform) != cfg.n_subcarriers:
        raise ValueError(f"expected {cfg.n_subcarriers} time samples, got {len(waveform)}")
    return ComplexSignal(np.fft.fft(waveform.samples), Domain.FREQUENCY)


def add_cp(symbol: ComplexSignal, cfg: OfdmConfig) -> ComplexSignal:
    """Prepend the last cp_len samples as a cyclic prefix."""
    _require_domain(symbol, Domain.TIME, "add_cp")
    if len(symbol) != cfg.n_subcarriers:
        raise ValueError(f"expected {cfg.n_subcarriers} time samples, got {len(symbol)}")
    s = symbol.samples
    if cfg.cp_len == 0:
        return ComplexSignal(s.copy(), Domain.TIME)
    return ComplexSignal(np.concatenate([s[-cfg.cp_len:], s]), Domain.TIME)


def remove_cp(waveform: ComplexSignal, cfg: OfdmConfig) -> ComplexSignal:
    """Drop the cyclic prefix, keeping the trailing N samples."""
    _require_domain(waveform, Domain.TIME, "remove_cp")
    if len(waveform) != cfg.symbol_len:
        raise ValueError(f"expected {cfg.symbol_len} samples, got {len(waveform)}")
    return ComplexSignal(waveform.samples[cfg.cp_len:].copy(), Domain.TIME)


def clip_threshold(waveform, ratio: float) -> float:
    """Clipping amplitude equal to ratio times the RMS amplitude of waveform."""
    if ratio <= 0:
        raise ValueError(f"clip ratio must be positive, got {ratio}")
    s = _samples(waveform)
    return float(ratio * np.sqrt(np.mean(np.abs(s) ** 2)))


def clip(waveform: ComplexSignal, threshold: float) -> ComplexSignal:
    """Magnitude clipping: samples above threshold keep phase, lose excess amplitude."""
    _require_domain(waveform, Domain.TIME, "clip")
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    s = waveform.samples
    mag = np.abs(s)
    over = mag > threshold
    out = s.copy()
    # preserve the phase of clipped samples exactly
    out[over] = threshold * s[over] / mag[over]
    return ComplexSignal(out, Domain.TIME)


def to_stacked_real(x) -> np.ndarray:
    """Stacked-real form of a complex vector or matrix.

    Vectors of length N become real vectors [Re; Im] of length 2N.  N x N
    matrices become 2N x 2N real matrices [[Re, -Im], [Im, Re]].  The map
    is a ring homomorphism: to(H) @ to(s) == to(H @ s).
    """
    a = _samples(x) if not isinstance(x, np.ndarray) else np.asarray(x, dtype=np.complex128)
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim == 1:
        return np.concatenate([a.real, a.imag])
    if a.ndim == 2:
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        re, im = a.real, a.imag
        return np.block([[re, -im], [im, re]])
    raise ValueError(f"expected a vector or square matrix, got ndim={a.ndim}")


def from_stacked_real(values: np.ndarray) -> np.ndarray:
    """Inverse of to_stacked_real for vectors and matrices."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1:
        if a.size % 2 != 0:
            raise ValueError(f"stacked-real vector length must be even, got {a.size}")
        n = a.size // 2
        return a[:n] + 1j * a[n:]
    if a.ndim == 2:
        if a.shape[0] != a.shape[1] or a.shape[0] % 2 != 0:
            raise ValueError(f"stacked-real matrix must be square with even size, got {a.shape}")
        n = a.shape[0] // 2
        return a[:n, :n] + 1j * a[n:, :n]
    raise ValueError(f"expected a vector or square matrix, got ndim={a.ndim}")


def _check_rows_stochastic(q: np.ndarray) -> None:
    if q.ndim != 2 or q.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) probability matrix, got shape {q.shape}")
    if np.any(q < 0):
        raise ValueError("demap on non-stochastic row: negative entries")
    sums = q.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"demap on non-stochastic row {bad}: sum={sums[bad]!r}")


def one_hot_encode(symbols, constellation: Constellation = QPSK, atol: float = 1e-9) -> np.ndarray:
    """One-hot matrix for symbols that sit exactly on constellation points."""
    s = _samples(symbols)
    d = np.abs(s[:, None] - constellation.points)
    idx = np.argmin(d, axis=1)
    worst = d[np.arange(s.size), idx]
    if np.any(worst > atol):
        bad = int(np.argmax(worst))
        raise ValueError(
            f"symbol {bad} ({s[bad]!r}) is {worst[bad]:.3e} away from the nearest "
            f"constellation point (tolerance {atol:g})"
        )
    return constellation.one_hot[idx]


def one_hot_demap_hard(probs: np.ndarray, constellation: Constellation = QPSK) -> ComplexSignal:
    """Arg-max decision per row of a probability matrix."""
    q = np.asarray(probs, dtype=np.float64)
    _check_rows_stochastic(q)
    idx = np.argmax(q, axis=1)
    return ComplexSignal(constellation.points[idx], Domain.FREQUENCY)


def one_hot_demap_soft(probs: np.ndarray, constellation: Constellation = QPSK) -> ComplexSignal:
    """Expected symbol per row: sum_i q_i * c_i.  Differentiable in q."""
    q = np.asarray(probs, dtype=np.float64)
    _check_rows_stochastic(q)
    return ComplexSignal(constellation.soft_demap(q), Domain.FREQUENCY)


def ser(estimate, truth, constellation: Constellation = QPSK) -> float:
    """Symbol error rate between two symbol vectors after hard decisions."""
    est = _samples(estimate)
    ref = _samples(truth)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ei = constellation.nearest_index(est)
    ri = constellation.nearest_index(ref)
    return float(np.mean(ei != ri))
