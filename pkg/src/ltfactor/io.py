"""File formats: observation CSVs, binary draw files and YAML run configs.

Draw file layout (little-endian)::

    b"LTDRAW" | uint16 version | uint32 header length | JSON header | records

The JSON header is space-padded so that records start on a 64-byte
boundary and so that it can be rewritten in place when the run finishes.
Each record is one thinned draw stored as a numpy structured scalar
(``loglik`` followed by every latent field as float64), so the record
block can be opened with :func:`numpy.memmap` without copying.  A
trailing partial record (an interrupted write) is ignored on reading.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import struct
from pathlib import Path

import numpy as np
import yaml

from .model import (
    ConfigError,
    ModelConfig,
    ObservationMatrix,
    PosteriorDraws,
    PriorSpec,
    default_priors,
    state_shapes,
    validate_config,
)
from .simulate import GenerationSpec

MAGIC = b"LTDRAW"
VERSION = 1
_PREFIX = struct.Struct("<6sHI")
_ALIGN = 64
_SLACK = 4096
INDEX_COLUMNS = ("t", "time")


class DataFormatError(ValueError):
    """An observation file that cannot be parsed; names the row and column."""


class DrawFileError(OSError):
    """A draw file that is truncated, corrupt or not a draw file at all."""


class DrawFileVersionError(DrawFileError):
    """A draw file written by an incompatible format version."""


# ---------------------------------------------------------------------------
# observation CSVs
# ---------------------------------------------------------------------------


def write_csv(path, data: ObservationMatrix, index_name: str = "t") -> None:
    """Header ``t,<channel names>`` then one row per time, t starting at 1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name, *data.channel_names])
        for t, row in enumerate(data.values, start=1):
            w.writerow([t, *(repr(float(v)) for v in row)])


def read_csv(path, stride: int = 1, drop_leading: int = 0) -> ObservationMatrix:
    """Read a header-plus-numeric-body CSV into an :class:`ObservationMatrix`.

    A first column named ``t`` or ``time`` is treated as a time index and
    dropped.  ``drop_leading`` rows are discarded before keeping every
    ``stride``-th row, which mirrors subsampling a raw recording.
    """
    if stride < 1 or drop_leading < 0:
        raise ConfigError("stride must be >= 1 and drop_leading >= 0")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    skip = 1 if header and header[0].lower() in INDEX_COLUMNS else 0
    names = header[skip:]
    if not names:
        raise DataFormatError(f"{path}: no channel columns in header")
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        out = []
        for c, cell in enumerate(row[skip:], start=skip + 1):
            try:
                out.append(float(cell))
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column {c} ({header[c - 1]!r}): "
                                      f"not a number: {cell!r}") from None
        values.append(out)
    arr = np.array(values, float).reshape(-1, len(names))[drop_leading::stride]
    try:
        return ObservationMatrix(arr, tuple(names))
    except ConfigError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# draw files
# ---------------------------------------------------------------------------


def record_dtype(config: ModelConfig, T: int) -> np.dtype:
    shapes = state_shapes(config, T)
    return np.dtype([("loglik", "<f8")] + [(k, "<f8", s) for k, s in shapes.items()])


def _encode_header(header: dict, capacity: int | None = None) -> bytes:
    blob = json.dumps(header, sort_keys=True).encode()
    if capacity is None:
        capacity = len(blob) + _SLACK
        capacity += (-(_PREFIX.size + capacity)) % _ALIGN
    if len(blob) > capacity:
        raise ValueError("header does not fit")
    return blob + b" " * (capacity - len(blob))


def read_header(path) -> tuple[dict, int]:
    """Parsed JSON header and the byte offset of the first record."""
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise DrawFileError(f"{path}: too short to be a draw file")
        magic, version, hlen = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise DrawFileError(f"{path}: not a draw file")
        if version != VERSION:
            raise DrawFileVersionError(f"{path}: draw file version {version}, this library reads {VERSION}")
        raw = fh.read(hlen)
    if len(raw) < hlen:
        raise DrawFileError(f"{path}: truncated header")
    try:
        header = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DrawFileError(f"{path}: corrupt header ({exc})") from None
    return header, _PREFIX.size + hlen


class DrawWriter:
    """Draw sink for :func:`~ltfactor.sampler.run_mcmc` that streams records to disk.

    ``snapshot`` flushes (the draws already live in the file) and
    ``restore`` truncates back to a checkpointed count, so a resumed run
    rewrites exactly the records an uninterrupted run would have written.
    """

    def __init__(self, path, config: ModelConfig, T: int, channel_names=(), prior: PriorSpec | None = None,
                 resume: bool = False):
        self.path = Path(path)
        self.config = config
        self.T = T
        self.dtype = record_dtype(config, T)
        self.header = {
            "format": "ltdraw", "version": VERSION, "config": config.to_dict(),
            "prior": None if prior is None else prior.to_dict(),
            "channel_names": list(channel_names), "T": T, "complete": False,
            "acceptance": {}, "record_size": self.dtype.itemsize,
        }
        if resume and self.path.exists():
            old, self.offset = read_header(self.path)
            if old["config"] != self.header["config"] or old["T"] != T:
                raise ConfigError(f"{self.path} was written for a different config")
            self.header = old
            self.capacity = self.offset - _PREFIX.size
            self._fh = open(self.path, "r+b")
            self.count = (os.path.getsize(self.path) - self.offset) // self.dtype.itemsize
        else:
            blob = _encode_header(self.header)
            self.capacity = len(blob)
            self.offset = _PREFIX.size + self.capacity
            self._fh = open(self.path, "w+b")
            self._fh.write(_PREFIX.pack(MAGIC, VERSION, self.capacity) + blob)
            self.count = 0
        self._fh.seek(self.offset + self.count * self.dtype.itemsize)

    def append(self, state, loglik: float) -> None:
        rec = np.zeros((), self.dtype)
        rec["loglik"] = loglik
        for k in self.dtype.names[1:]:
            rec[k] = getattr(state, k)
        self._fh.write(rec.tobytes())
        self.count += 1

    def snapshot(self) -> dict:
        self._fh.flush()
        return {}

    def restore(self, snap: dict, count: int) -> None:
        if count > self.count:
            raise DrawFileError(f"{self.path} holds {self.count} draws, checkpoint expects {count}")
        self.count = count
        self._fh.truncate(self.offset + count * self.dtype.itemsize)
        self._fh.seek(self.offset + count * self.dtype.itemsize)

    def finish(self, config, prior, acceptance, channel_names, T) -> PosteriorDraws:
        self.header.update(
            prior=prior.to_dict(), acceptance=dict(acceptance),
            channel_names=list(channel_names), complete=True, n_draws=self.count,
        )
        self._fh.seek(_PREFIX.size)
        self._fh.write(_encode_header(self.header, self.capacity))
        self._fh.close()
        return read_draws(self.path)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_draws(path, mmap: bool = True) -> PosteriorDraws:
    """Open a draw file as :class:`PosteriorDraws` (memory-mapped by default)."""
    header, offset = read_header(path)
    try:
        config = ModelConfig.from_dict(header["config"])
        T = int(header["T"])
        prior = default_priors(config) if header.get("prior") is None else PriorSpec.from_dict(header["prior"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DrawFileError(f"{path}: header is missing or has bad fields ({exc})") from None
    dtype = record_dtype(config, T)
    n = (os.path.getsize(path) - offset) // dtype.itemsize
    if n == 0:
        recs = np.zeros(0, dtype)
    elif mmap:
        recs = np.memmap(path, dtype=dtype, mode="r", offset=offset, shape=(n,))
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            recs = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype)
    fields = {k: recs[k] for k in dtype.names[1:]}
    return PosteriorDraws(
        config=config, prior=prior, fields=fields, loglik=recs["loglik"],
        acceptance=header.get("acceptance", {}), channel_names=tuple(header.get("channel_names", ())), T=T,
    )


# ---------------------------------------------------------------------------
# YAML run configuration
# ---------------------------------------------------------------------------

MODEL_KEYS = {"m", "p", "r", "s", "variant", "lambda_w", "lambda_sigma", "K", "K_alpha"}
SECTIONS = {"model", "mcmc", "prior", "simulate", "impulse"}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _prior_from(section: dict, config: ModelConfig) -> PriorSpec:
    d = _merge(default_priors(config).to_dict(), section)
    p = config.p
    scale = d["psi_prec"]["scale"]
    if np.ndim(scale) == 0:
        d["psi_prec"]["scale"] = (float(scale) * np.eye(p)).tolist()
    d0 = d["delta0"]
    if np.ndim(d0["mean"]) == 0:
        d0["mean"] = [float(d0["mean"])] * p
    if np.ndim(d0["cov"]) == 0:
        d0["cov"] = (float(d0["cov"]) * np.eye(p)).tolist()
    return PriorSpec.from_dict(d)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a YAML config file can hold."""

    model: ModelConfig
    prior: PriorSpec
    simulate: dict
    impulse: dict

    def generation_spec(self) -> GenerationSpec:
        """Truth settings from the ``simulate`` section (defaults when absent).

        A scalar ``psi`` means that multiple of the identity.
        """
        sim = dict(self.simulate) if self.simulate else default_simulation(self.model)
        sim.pop("seed", None)
        if "T" not in sim:
            raise ConfigError("simulate section needs T")
        arrays = {f.name for f in dataclasses.fields(GenerationSpec)} - {
            "T", "x_init_variance", "y0_variance", "max_abs", "max_tries"}
        kw = {k: (np.asarray(v, float) if k in arrays and v is not None else v) for k, v in sim.items()}
        if kw.get("psi") is not None and kw["psi"].ndim == 0:
            kw["psi"] = float(kw["psi"]) * np.eye(self.model.p)
        try:
            return GenerationSpec(**kw)
        except TypeError as exc:
            raise ConfigError(f"simulate section: {exc}") from None


def default_simulation(config: ModelConfig) -> dict:
    """T=200 with constant TVAR coefficients of one quasi-periodic pair.

    The pair has modulus 0.95 and period 12; higher lags are zero.  All
    other quantities come from the prior.
    """
    delta = np.zeros(config.p)
    delta[0] = 2 * 0.95 * np.cos(2 * np.pi / 12)
    if config.p > 1:
        delta[1] = -0.95**2
    else:
        delta[0] = 0.95
    return {"T": 200, "delta": delta.tolist(), "psi": 0.0}


def parse_config(raw: dict | None, variant: str | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed YAML mapping."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model = dict(raw.get("model") or {})
    bad = set(model) - MODEL_KEYS
    if bad:
        raise ConfigError(f"unknown model keys: {sorted(bad)}")
    if variant is not None:
        model["variant"] = variant
    if model.get("variant", "M") not in ("M", "M+"):
        raise ConfigError(f"variant must be M or M+, got {model['variant']!r}")
    try:
        config = ModelConfig.from_dict({**model, "mcmc": raw.get("mcmc") or {}})
        prior = _prior_from(raw.get("prior") or {}, config)
    except ConfigError:
        raise
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from None
    validate_config(config, prior)
    return RunConfig(config, prior, dict(raw.get("simulate") or {}), dict(raw.get("impulse") or {}))


def load_config(path, variant: str | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_config(raw, variant)
