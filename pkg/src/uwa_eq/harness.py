"""Monte-Carlo benchmark harness: datasets, SER sweeps, CSV and plots.

Reproducibility model: every random quantity is drawn from a generator
derived from (config seed, stream id, trial index).  Data streams do not
depend on the method, SNR point, CSI error level or clipping flag, so all
operating points of one sweep see exactly the same transmitted symbols
and noise shapes (common random numbers), and the CSI perturbation at
different sigma values scales one shared draw.  Two runs of the same
config therefore produce byte-identical CSVs up to the wall-time column.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import equalizers
from . import udnet as udnet_mod
from .channel import (
    Cir,
    FreqChannelMatrix,
    SynthCirParams,
    band_energy_fraction,
    block_energy_fraction,
    freq_matrix,
    load_cir,
    make_sliding_plan,
    perturb_csi,
    save_cir,
    synth_cir,
)
from .noise import NoiseSpec
from .pipeline import simulate_symbol
from .signal import OfdmConfig, QPSK
from .udnet import UdnetModel, init_model

__all__ = [
    "MethodSpec",
    "SynthChannelSpec",
    "FileChannelSpec",
    "ExperimentConfig",
    "Manifest",
    "SweepRow",
    "SweepResult",
    "THREADS_ENV_VAR",
    "gen_dataset",
    "load_manifest",
    "run_sweep",
    "emit_csv",
    "emit_plot_script",
    "timing_benchmark",
    "inspect_channel_stats",
    "worker_count",
]

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "UWA_EQ_THREADS"

_KNOWN_METHODS = ("zf", "mmse", "dfe", "ml", "udnet")

# independent seed streams; trial data excludes method/SNR/sigma/clipping
_STREAM_TRIAL_DATA = 1
_STREAM_CSI = 2
_STREAM_CIR = 3


def _derived_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, stream, index)))


@dataclass(frozen=True)
class MethodSpec:
    """An equalizer by name plus fixed extra keyword parameters."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _KNOWN_METHODS:
            raise ValueError(f"unknown method {self.name!r}, expected one of {_KNOWN_METHODS}")


@dataclass(frozen=True)
class SynthChannelSpec:
    """Draw `count` fresh synthetic channel realisations."""

    params: SynthCirParams
    count: int
    label: str | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")

    def channel_id(self) -> str:
        if self.label:
            return self.label
        p = self.params
        return (f"synth-L{p.tap_count}-decay{p.delay_power_decay_db:g}"
                f"-fd{p.doppler_spread:g}-c{self.count}")


@dataclass(frozen=True)
class FileChannelSpec:
    """Use channel realisations stored on disk (e.g. a dataset's test split)."""

    paths: tuple[str, ...]
    label: str | None = None

    def __post_init__(self):
        if not self.paths:
            raise ValueError("need at least one channel file")
        object.__setattr__(self, "paths", tuple(str(p) for p in self.paths))

    def channel_id(self) -> str:
        if self.label:
            return self.label
        digest = zlib.crc32(";".join(Path(p).name for p in self.paths).encode()) & 0xFFFFFFFF
        return f"files-{digest:08x}"


@dataclass(frozen=True)
class ExperimentConfig:
    ofdm: OfdmConfig
    channel: SynthChannelSpec | FileChannelSpec
    block_size: int
    snr_list_db: tuple[float, ...]
    methods: tuple[MethodSpec, ...]
    noise: NoiseSpec
    trials_per_point: int
    seed: int
    csi_sigma: float = 0.0
    clip_ratio: float | None = None
    split_fraction: float = 0.75

    def __post_init__(self):
        if not self.snr_list_db:
            raise ValueError("snr_list_db must not be empty")
        if not self.methods:
            raise ValueError("methods must not be empty")
        if self.trials_per_point < 1:
            raise ValueError(f"trials_per_point must be >= 1, got {self.trials_per_point}")
        if self.csi_sigma < 0:
            raise ValueError(f"csi_sigma must be non-negative, got {self.csi_sigma}")
        if self.clip_ratio is not None and self.clip_ratio <= 0:
            raise ValueError(f"clip_ratio must be positive, got {self.clip_ratio}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must lie strictly inside (0, 1), "
                             f"got {self.split_fraction}")
        if self.ofdm.n_subcarriers % self.block_size != 0:
            raise ValueError(f"block_size {self.block_size} does not divide "
                             f"n_subcarriers {self.ofdm.n_subcarriers}")
        object.__setattr__(self, "snr_list_db", tuple(float(s) for s in self.snr_list_db))
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True)
class Manifest:
    """Train/test split of a materialised channel dataset."""

    channel_id: str
    seed: int
    train: tuple[str, ...]
    test: tuple[str, ...]


def gen_dataset(config: ExperimentConfig, out_dir) -> Manifest:
    """Materialise the channel set and split it into train/test files.

    Synthetic channels are drawn per-realisation from generators derived
    from (seed, realisation index) and written as binary files; an
    existing file list is split in place without copying.  The shuffle and
    split are deterministic in the config seed.  Writes manifest.json next
    to the files and returns the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.channel
    if isinstance(spec, SynthChannelSpec):
        paths = []
        for i in range(spec.count):
            rng = _derived_rng(config.seed, _STREAM_CIR, i)
            cir = synth_cir(spec.params, config.ofdm.symbol_len, rng)
            p = out / f"cir_{i:04d}.ucir"
            save_cir(cir, p)
            paths.append(p.name)
    else:
        paths = list(spec.paths)
    count = len(paths)
    n_train = round(config.split_fraction * count)
    if not 1 <= n_train <= count - 1:
        raise ValueError(
            f"split_fraction {config.split_fraction} leaves an empty side "
            f"for {count} realisations"
        )
    order = np.random.default_rng(
        np.random.SeedSequence(entropy=(config.seed, 4))
    ).permutation(count)
    train = tuple(paths[i] for i in sorted(order[:n_train]))
    test = tuple(paths[i] for i in sorted(order[n_train:]))
    manifest = Manifest(channel_id=spec.channel_id(), seed=config.seed,
                        train=train, test=test)
    with open(out / "manifest.json", "w", encoding="ascii") as f:
        json.dump({"channel_id": manifest.channel_id, "seed": manifest.seed,
                   "train": list(manifest.train), "test": list(manifest.test)},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_manifest(path) -> Manifest:
    """Read manifest.json; bare file names resolve against its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path, "r", encoding="ascii") as f:
        data = json.load(f)
    base = path.parent

    def resolve(name: str) -> str:
        p = Path(name)
        return str(p if p.is_absolute() else base / p)

    return Manifest(
        channel_id=data["channel_id"],
        seed=int(data["seed"]),
        train=tuple(resolve(p) for p in data["train"]),
        test=tuple(resolve(p) for p in data["test"]),
    )


@dataclass(frozen=True)
class SweepRow:
    method: str
    channel_id: str
    snr_db: float
    csi_sigma: float
    clipped: bool
    noise_kind: str
    symbols_tested: int
    symbol_errors: int
    ser: float
    wall_time_per_symbol: float


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen


def worker_count() -> int:
    """Worker cap from the environment; unset means single-threaded."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 0, got {n}")
    if n == 0:
        return os.cpu_count() or 1
    return n


def _resolve_channel(config: ExperimentConfig) -> tuple[list[Cir], str]:
    spec = config.channel
    if isinstance(spec, FileChannelSpec):
        cirs = [load_cir(p) for p in spec.paths]
    else:
        cirs = [
            synth_cir(spec.params, config.ofdm.symbol_len, _derived_rng(config.seed, _STREAM_CIR, i))
            for i in range(spec.count)
        ]
    for i, c in enumerate(cirs):
        if c.sample_count != config.ofdm.symbol_len:
            raise ValueError(
                f"channel realisation {i} covers {c.sample_count} samples, "
                f"but the modem needs {config.ofdm.symbol_len}"
            )
    return cirs, spec.channel_id()


def _apply_method(spec: MethodSpec, y: np.ndarray, h: FreqChannelMatrix,
                  plan, snr_db: float, model: UdnetModel | None) -> np.ndarray:
    if spec.name == "udnet":
        return udnet_mod.equalize(model, y, h, plan)
    params = dict(spec.params)
    if spec.name in ("mmse", "dfe"):
        params.setdefault("noise_var", 10.0 ** (-snr_db / 10.0))
    return equalizers.sliding_equalize(y, h, plan, spec.name, params)


def _run_point(config: ExperimentConfig, spec: MethodSpec, snr_db: float,
               cirs: list[Cir], h_true: list[FreqChannelMatrix], channel_id: str,
               plan, model: UdnetModel | None) -> SweepRow:
    n = config.ofdm.n_subcarriers
    points = QPSK.points
    errors = 0
    tested = 0
    times = []
    for trial in range(config.trials_per_point):
        data_rng = _derived_rng(config.seed, _STREAM_TRIAL_DATA, trial)
        ci = trial % len(cirs)
        idx = data_rng.integers(0, 4, n)
        y = simulate_symbol(points[idx], cirs[ci], config.ofdm, config.noise,
                            snr_db, data_rng, clip_ratio=config.clip_ratio)
        if config.csi_sigma > 0:
            # antithetic pair h +/- sigma*eps: the first-order effect of the
            # CSI error cancels between the branches, so paired sweeps over
            # sigma expose the quadratic degradation instead of draw noise
            csi_rng = _derived_rng(config.seed, _STREAM_CSI, trial)
            pert = perturb_csi(cirs[ci], config.csi_sigma, csi_rng)
            anti = Cir(2.0 * cirs[ci].taps - pert.taps)
            h_hats = [freq_matrix(pert, config.ofdm), freq_matrix(anti, config.ofdm)]
        else:
            h_hats = [h_true[ci]]
        for h_hat in h_hats:
            t0 = time.perf_counter()
            try:
                est = _apply_method(spec, y, h_hat, plan, snr_db, model)
            except equalizers.SingularChannelError as exc:
                logger.warning("trial %d, method %s: %s; counting the symbol as lost",
                               trial, spec.name, exc)
                errors += n
                tested += n
                continue
            times.append((time.perf_counter() - t0) / n)
            errors += int(np.sum(QPSK.nearest_index(est) != idx))
            tested += n
    return SweepRow(
        method=spec.name,
        channel_id=channel_id,
        snr_db=float(snr_db),
        csi_sigma=float(config.csi_sigma),
        clipped=config.clip_ratio is not None,
        noise_kind=config.noise.kind.value,
        symbols_tested=tested,
        symbol_errors=int(errors),
        ser=errors / tested,
        wall_time_per_symbol=float(np.median(times)) if times else float("nan"),
    )


def run_sweep(config: ExperimentConfig, model: UdnetModel | None = None) -> SweepResult:
    """Measure SER for every (method, SNR) point of the config.

    Each point simulates trials_per_point whole OFDM symbols end to end.
    Points are independent jobs and may run on a thread pool capped by the
    UWA_EQ_THREADS environment variable; results are identical to a
    sequential run because every trial derives its own generators.
    """
    for spec in config.methods:
        if spec.name == "udnet":
            if model is None:
                raise ValueError("method 'udnet' needs a trained model")
            if model.block_size != config.block_size:
                raise ValueError(f"model block size {model.block_size} does not match "
                                 f"sweep block size {config.block_size}")
        if spec.name == "ml" and config.block_size > equalizers.ML_MAX_BLOCK:
            raise ValueError(f"method 'ml' is limited to blocks of "
                             f"{equalizers.ML_MAX_BLOCK}, got {config.block_size}")
    cirs, channel_id = _resolve_channel(config)
    h_true = [freq_matrix(c, config.ofdm) for c in cirs]
    plan = make_sliding_plan(config.ofdm.n_subcarriers, config.block_size)
    jobs = [(spec, snr) for spec in config.methods for snr in config.snr_list_db]
    workers = worker_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda job: _run_point(config, job[0], job[1], cirs, h_true,
                                       channel_id, plan, model),
                jobs,
            ))
    else:
        rows = [_run_point(config, spec, snr, cirs, h_true, channel_id, plan, model)
                for spec, snr in jobs]
    return SweepResult(rows=rows)


_CSV_HEADER = ("method,channel_id,snr_db,csi_sigma,clipped,noise_kind,"
               "symbols_tested,symbol_errors,ser,wall_time_per_symbol")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def emit_csv(result: SweepResult, path) -> None:
    """Write sweep rows as CSV with full float precision (17 significant digits)."""
    lines = [_CSV_HEADER]
    for r in result.rows:
        for text in (r.method, r.channel_id, r.noise_kind):
            if "," in text:
                raise ValueError(f"field {text!r} must not contain commas")
        lines.append(",".join([
            r.method,
            r.channel_id,
            _fmt(r.snr_db),
            _fmt(r.csi_sigma),
            str(int(r.clipped)),
            r.noise_kind,
            str(r.symbols_tested),
            str(r.symbol_errors),
            _fmt(r.ser),
            _fmt(r.wall_time_per_symbol),
        ]))
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(lines))
        f.write("\n")


def emit_plot_script(result: SweepResult, path, csv_path) -> None:
    """Write a gnuplot script plotting SER over SNR, one series per method."""
    methods = " ".join(result.methods())
    text = f"""\
# SER versus SNR from {csv_path}
set datafile separator ','
set datafile missing 'NaN'
set logscale y
set grid
set xlabel 'SNR (dB)'
set ylabel 'symbol error rate'
set key outside right top
methods = "{methods}"
plot for [i=1:words(methods)] '{csv_path}' \\
    using (strcol(1) eq word(methods, i) ? $3 : NaN):9 \\
    with linespoints title word(methods, i)
"""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(text)


def timing_benchmark(subcarriers, block_size: int = 32, n_layers: int = 6,
                     hidden_dim: int | None = None, tap_count: int = 16,
                     doppler_spread: float = 2e-3, snr_db: float = 25.0,
                     seed: int = 0, min_symbols: int = 1000) -> list[dict]:
    """Per-symbol equalization wall time versus subcarrier count.

    For each N, one doubly-selective channel symbol is equalized with the
    full-matrix MMSE (one N x N solve), the block MMSE and the unfolded
    network (untrained weights; inference cost does not depend on the
    values).  Each timing is the median per-symbol time over enough
    repetitions to cover at least min_symbols data symbols.
    """
    rows = []
    noise = NoiseSpec()
    for n in subcarriers:
        cfg = OfdmConfig(n_subcarriers=int(n), cp_len=tap_count)
        rng = _derived_rng(seed, _STREAM_CIR, int(n))
        cir = synth_cir(SynthCirParams(tap_count=tap_count, doppler_spread=doppler_spread),
                        cfg.symbol_len, rng)
        h = freq_matrix(cir, cfg)
        plan = make_sliding_plan(cfg.n_subcarriers, block_size)
        model = init_model(block_size, n_layers, rng, hidden_dim)
        idx = rng.integers(0, 4, cfg.n_subcarriers)
        y = simulate_symbol(QPSK.points[idx], cir, cfg, noise, snr_db, rng)
        noise_var = 10.0 ** (-snr_db / 10.0)
        reps = max(3, math.ceil(min_symbols / cfg.n_subcarriers))
        tasks = {
            "mmse_full": lambda: equalizers.mmse(y, h.h_freq, noise_var),
            "mmse_sliding": lambda: equalizers.sliding_equalize(
                y, h, plan, "mmse", {"noise_var": noise_var}),
            "udnet_sliding": lambda: udnet_mod.equalize(model, y, h, plan),
        }
        for name, fn in tasks.items():
            fn()  # warm-up outside the timed region
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                fn()
                times.append((time.perf_counter() - t0) / cfg.n_subcarriers)
            rows.append({
                "n_subcarriers": cfg.n_subcarriers,
                "method": name,
                "seconds_per_symbol": float(np.median(times)),
                "symbols_timed": reps * cfg.n_subcarriers,
            })
    return rows


def inspect_channel_stats(cir: Cir, cfg: OfdmConfig, block_size: int | None = None,
                          widths=(0, 1, 2, 4, 8, 16)) -> dict:
    """Numeric view of where the frequency-domain channel energy sits."""
    h = freq_matrix(cir, cfg)
    stats = {
        "n_subcarriers": cfg.n_subcarriers,
        "tap_count": cir.tap_count,
        "band_energy_fraction": {
            int(w): band_energy_fraction(h, int(w))
            for w in widths if w < cfg.n_subcarriers // 2
        },
    }
    if block_size is not None:
        plan = make_sliding_plan(cfg.n_subcarriers, block_size)
        stats["block_energy_fraction"] = block_energy_fraction(h, plan)
        stats["block_size"] = block_size
    return stats
