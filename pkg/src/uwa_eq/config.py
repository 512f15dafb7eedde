"""Experiment configuration files.

Flat INI-style text: `key = value` lines under `[section]` headers.
Command line flags override individual keys before the dataclasses are
built, so a single file can drive dataset generation, training and
sweeps.  See README.md for a complete annotated example.
"""

from __future__ import annotations

import configparser

from .channel import SynthCirParams
from .harness import ExperimentConfig, FileChannelSpec, MethodSpec, SynthChannelSpec
from .noise import NoiseKind, NoiseSpec
from .signal import OfdmConfig
from .udnet import TrainConfig

__all__ = [
    "read_config",
    "apply_overrides",
    "experiment_from_config",
    "train_settings_from_config",
]


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, "r", encoding="utf-8") as f:
        cp.read_file(f)
    return cp


def apply_overrides(cp: configparser.ConfigParser, overrides: dict[str, str] | None) -> None:
    """Apply 'section.key' -> value pairs on top of the parsed file."""
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ValueError(f"override key {dotted!r} must look like 'section.key'")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)


def _get(cp, section: str, key: str, conv, default=None, required: bool = False):
    try:
        raw = cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        if required:
            raise ValueError(f"config is missing required key [{section}] {key}")
        return default
    raw = raw.strip()
    if raw == "":
        if required:
            raise ValueError(f"config key [{section}] {key} is empty")
        return default
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"config key [{section}] {key} = {raw!r}: {exc}") from exc


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def _channel_from_config(cp) -> SynthChannelSpec | FileChannelSpec:
    kind = _get(cp, "channel", "kind", str, default="synth").lower()
    label = _get(cp, "channel", "label", str)
    if kind == "synth":
        params = SynthCirParams(
            tap_count=_get(cp, "channel", "tap_count", int, required=True),
            delay_power_decay_db=_get(cp, "channel", "decay_db_per_tap", float, default=2.0),
            doppler_spread=_get(cp, "channel", "doppler_spread", float, default=0.0),
        )
        count = _get(cp, "channel", "count", int, default=100)
        return SynthChannelSpec(params=params, count=count, label=label)
    if kind == "files":
        paths = _get(cp, "channel", "paths", _str_list, required=True)
        return FileChannelSpec(paths=paths, label=label)
    raise ValueError(f"config key [channel] kind = {kind!r}: expected 'synth' or 'files'")


def _noise_from_config(cp) -> NoiseSpec:
    kind_raw = _get(cp, "noise", "kind", str, default="gaussian").lower()
    try:
        kind = NoiseKind(kind_raw)
    except ValueError:
        raise ValueError(f"config key [noise] kind = {kind_raw!r}: expected one of "
                         f"{[k.value for k in NoiseKind]}")
    return NoiseSpec(
        kind=kind,
        snr_db=_get(cp, "noise", "snr_db", float, default=25.0),
        alpha=_get(cp, "noise", "alpha", float, default=1.5),
        beta=_get(cp, "noise", "beta", float, default=0.0),
        scale=_get(cp, "noise", "scale", float, default=1.0),
        path=_get(cp, "noise", "path", str),
    )


def experiment_from_config(cp: configparser.ConfigParser,
                           overrides: dict[str, str] | None = None) -> ExperimentConfig:
    apply_overrides(cp, overrides)
    ofdm = OfdmConfig(
        n_subcarriers=_get(cp, "ofdm", "n_subcarriers", int, required=True),
        cp_len=_get(cp, "ofdm", "cp_len", int, required=True),
    )
    methods = tuple(MethodSpec(name) for name in
                    _get(cp, "sweep", "methods", _str_list, default=("zf", "mmse")))
    return ExperimentConfig(
        ofdm=ofdm,
        channel=_channel_from_config(cp),
        block_size=_get(cp, "sweep", "block_size", int, default=ofdm.n_subcarriers),
        snr_list_db=_get(cp, "sweep", "snr_db", _float_list, default=(10.0, 20.0, 30.0)),
        methods=methods,
        noise=_noise_from_config(cp),
        trials_per_point=_get(cp, "sweep", "trials_per_point", int, default=100),
        seed=_get(cp, "run", "seed", int, default=0),
        csi_sigma=_get(cp, "sweep", "csi_sigma", float, default=0.0),
        clip_ratio=_get(cp, "sweep", "clip_ratio", float),
        split_fraction=_get(cp, "run", "split_fraction", float, default=0.75),
    )


def train_settings_from_config(cp: configparser.ConfigParser,
                               overrides: dict[str, str] | None = None
                               ) -> tuple[TrainConfig, dict]:
    """TrainConfig plus the model dimensions implied by the file.

    The returned dict carries block_size, n_layers and hidden_dim (None
    meaning the 8x block size default).
    """
    apply_overrides(cp, overrides)
    train_cfg = TrainConfig(
        learning_rate=_get(cp, "train", "learning_rate", float, default=1e-3),
        batch_size=_get(cp, "train", "batch_size", int, default=256),
        epochs=_get(cp, "train", "epochs", int, default=50),
        train_snr_db=_get(cp, "train", "train_snr_db", float, default=25.0),
        seed=_get(cp, "train", "seed", int, default=0),
    )
    dims = {
        "block_size": _get(cp, "sweep", "block_size", int, required=True),
        "n_layers": _get(cp, "train", "layers", int, default=6),
        "hidden_dim": _get(cp, "train", "hidden_dim", int),
    }
    return train_cfg, dims
