import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dmrikq.io import Config, ConfigError, KqtFormatError, parse_kv, read_kqt, write_kqt, write_kv

shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, shapes, elements=finite))
def test_kqt_round_trip_real(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("kqt") / "x.kqt"
    write_kqt(path, x)
    y = read_kqt(path)
    assert y.dtype == np.float64 and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.complex128, shapes, elements=st.complex_numbers(allow_nan=False, allow_infinity=False)))
def test_kqt_round_trip_complex(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("kqt") / "x.kqt"
    write_kqt(path, x)
    y = read_kqt(path)
    assert y.dtype == np.complex128 and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_kqt_preserves_nan_payload(tmp_path):
    x = np.array([np.nan, -0.0, np.inf])
    write_kqt(tmp_path / "a.kqt", x)
    assert read_kqt(tmp_path / "a.kqt").tobytes() == x.tobytes()


def test_kqt_header_layout(tmp_path):
    write_kqt(tmp_path / "a.kqt", np.zeros((2, 0, 3), complex))
    raw = (tmp_path / "a.kqt").read_bytes()
    assert raw == b"KQT1 c128 3 2 0 3\n"


@pytest.mark.parametrize("blob", [b"", b"XXXX f64 1 2\n" + bytes(16), b"KQT1 f32 1 2\n" + bytes(8),
                                  b"KQT1 f64 2 2\n" + bytes(16), b"KQT1 f64 1 2\n" + bytes(15)])
def test_kqt_rejects_malformed(tmp_path, blob):
    (tmp_path / "bad.kqt").write_bytes(blob)
    with pytest.raises(KqtFormatError):
        read_kqt(tmp_path / "bad.kqt")


def test_parse_kv_comments_and_whitespace():
    entries = parse_kv("# header\n a = 1 \nb=two words # trailing\n\n")
    assert entries == {"a": "1", "b": "two words"}


@pytest.mark.parametrize("text, line", [("a = 1\na = 2\n", 2), ("a = 1\n\njunk\n", 3), ("= 3\n", 1)])
def test_parse_kv_errors_report_line(text, line):
    with pytest.raises(ConfigError, match=f":{line}:"):
        parse_kv(text, "cfg")


def test_config_typed_getters(tmp_path):
    write_kv(tmp_path / "c.cfg", {"n": "4", "x": "0.5", "flag": "yes", "v": "1, 2 3", "seed": "7"})
    cfg = Config.load(tmp_path / "c.cfg")
    assert cfg.get_int("n") == 4
    assert cfg.get_float("x") == 0.5
    assert cfg.get_bool("flag") is True
    assert cfg.get_floats("v") == (1.0, 2.0, 3.0)
    assert cfg.get_int("missing", 9) == 9
    assert cfg.seed("seed") == 7


def test_config_errors(tmp_path):
    (tmp_path / "c.cfg").write_text("n = four\n")
    cfg = Config.load(tmp_path / "c.cfg")
    with pytest.raises(ConfigError, match="c.cfg:1"):
        cfg.get_int("n")
    with pytest.raises(ConfigError, match="missing required"):
        cfg.get_float("x")
    with pytest.raises(ConfigError, match="seed"):
        cfg.seed("train.seed")
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "nope.cfg")
