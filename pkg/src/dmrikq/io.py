"""File formats: KQT tensors, flat key/value configs and run manifests.

KQT layout: an ASCII header ``KQT1 <dtype> <ndim> <d0> ... <dn-1>\\n`` followed by the
raw little-endian row-major payload. ``f64`` is float64, ``c128`` interleaved
real/imag float64.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

KQT_MAGIC = "KQT1"
_DTYPES = {"f64": np.dtype("<f8"), "c128": np.dtype("<c16")}


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


class KqtFormatError(ValueError):
    pass


def write_kqt(path, x) -> None:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        tag, dt = "c128", _DTYPES["c128"]
    else:
        tag, dt = "f64", _DTYPES["f64"]
    header = " ".join([KQT_MAGIC, tag, str(x.ndim), *map(str, x.shape)]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(x, dtype=dt).tobytes())


def read_kqt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise KqtFormatError(f"{path}: missing header line")
    fields = raw[:nl].decode("ascii").split()
    if len(fields) < 3 or fields[0] != KQT_MAGIC or fields[1] not in _DTYPES:
        raise KqtFormatError(f"{path}: bad header {raw[:nl]!r}")
    ndim = int(fields[2])
    shape = tuple(int(d) for d in fields[3:])
    if len(shape) != ndim:
        raise KqtFormatError(f"{path}: header declares {ndim} dims but lists {len(shape)}")
    dt = _DTYPES[fields[1]]
    payload = raw[nl + 1:]
    expected = dt.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise KqtFormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    out = np.frombuffer(payload, dtype=dt).reshape(shape)
    return out.astype(dt.newbyteorder("="), copy=True)


# -- key/value text files ----------------------------------------------------

def parse_kv(text: str, source: str = "<config>", lines: dict | None = None) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; duplicate keys are an error.

    If ``lines`` is given it is filled with the line number of every key.
    """
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
        if lines is not None:
            lines[key] = lineno
    return out


def read_kv(path, lines: dict | None = None) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_kv(text, str(path), lines)


def write_kv(path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in sorted(entries.items())]
    Path(path).write_text("\n".join(lines) + "\n")


class Config:
    """Typed accessors over a flat key/value mapping."""

    def __init__(self, entries: dict[str, str], source: str = "<config>",
                 lines: dict[str, int] | None = None):
        self.entries = dict(entries)
        self.source = source
        self.lines = lines or {}

    @classmethod
    def load(cls, path) -> "Config":
        lines: dict[str, int] = {}
        entries = read_kv(path, lines)
        return cls(entries, str(path), lines)

    def _get(self, key, default, conv, what):
        if key not in self.entries:
            if default is _REQUIRED:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        raw = self.entries[key]
        try:
            return conv(raw)
        except ValueError as exc:
            where = f"{self.source}:{self.lines[key]}" if key in self.lines else self.source
            raise ConfigError(f"{where}: {key} = {raw!r} is not a valid {what}") from exc

    def get_str(self, key, default=None):
        return self._get(key, _REQUIRED if default is None else default, str, "string")

    def get_int(self, key, default=None):
        return self._get(key, _REQUIRED if default is None else default, int, "integer")

    def get_float(self, key, default=None):
        return self._get(key, _REQUIRED if default is None else default, float, "number")

    def get_bool(self, key, default=None):
        return self._get(key, _REQUIRED if default is None else default, _to_bool, "boolean")

    def get_floats(self, key, default=None):
        return self._get(key, _REQUIRED if default is None else default,
                         lambda s: tuple(float(v) for v in s.replace(",", " ").split()), "number list")

    def seed(self, key) -> int:
        if key not in self.entries:
            raise ConfigError(f"{self.source}: stochastic stage needs an explicit seed ({key!r})")
        return self.get_int(key)


_REQUIRED = object()


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)
