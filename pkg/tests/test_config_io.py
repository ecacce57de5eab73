import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from competlab.config import load_config, parse_config
from competlab.errors import ConfigError
from competlab.io import load_state, read_csv, save_state, write_csv, write_json

from conftest import probe_state

BASE = """\
spec:
  dim: 2
  matrix_family: identity
solve:
  beta_schedule: [-1, -10]
  h: 1/16
"""


def test_minimal_parse_and_fraction_step():
    cfg = parse_config(BASE)
    assert cfg.solve.h == 1 / 16
    assert cfg.solve.beta_schedule == (-1.0, -10.0)
    assert cfg.analyses == () and cfg.seed == 0


@pytest.mark.parametrize("text, line", [
    (BASE + "  tol: 1e-9\n", 7),
    (BASE.replace("  dim: 2\n", "  dim: 2\n  dim: 3\n"), 3),
    (BASE + "extra: 1\n", 7),
    (BASE.replace("h: 1/16", "h: one"), 6),
    (BASE + "analyses:\n  - stage: acf\n    eta: 0.3\n", 9),
    (BASE + "analyses:\n  - stage: nope\n", 8),
], ids=["unknown-key", "duplicate-key", "unknown-top", "bad-number", "eta-range", "unknown-stage"])
def test_errors_are_line_anchored(text, line):
    with pytest.raises(ConfigError, match=f"line {line}:"):
        parse_config(text)


def test_gamma_restricted_by_dimension():
    parse_config(BASE + "  gamma: 3\n")
    three = BASE.replace("dim: 2", "dim: 3")
    with pytest.raises(ConfigError, match="line 7"):
        parse_config(three + "  gamma: 3\n")


def test_empty_and_malformed():
    with pytest.raises(ConfigError):
        parse_config("")
    with pytest.raises(ConfigError):
        parse_config("spec: [1, 2\n")


def test_shipped_configs_load():
    for name in ("minimal", "quick", "sweep"):
        cfg = load_config(f"{__file__.rsplit('/tests/', 1)[0]}/configs/{name}.yaml")
        assert len(cfg.digest()) == 64


def test_digest_tracks_content():
    a, b = parse_config(BASE), parse_config(BASE.replace("-10]", "-100]"))
    assert a.digest() == parse_config(BASE).digest() != b.digest()


def test_state_roundtrip(tmp_path):
    st_ = probe_state(lambda X: np.stack([1 + X[..., 0] ** 2, np.exp(X[..., 1])]), h=1 / 8)
    st_ = st_.with_values(st_.values, beta=-7.5)
    save_state(st_, tmp_path / "s")
    back = load_state(tmp_path / "s.bin")
    assert np.array_equal(back.values, st_.values)
    assert back.beta == -7.5 and back.grid.h == st_.grid.h
    assert back.spec.as_dict() == st_.spec.as_dict()
    meta = json.loads((tmp_path / "s.json").read_text())
    assert meta["dtype"] == "<f8" and meta["shape"] == list(st_.values.shape)


def test_checksum_mismatch(tmp_path):
    save_state(probe_state(lambda X: np.stack([X[..., 0] ** 2] * 2), h=1 / 4), tmp_path / "s")
    raw = bytearray((tmp_path / "s.bin").read_bytes())
    raw[0] ^= 1
    (tmp_path / "s.bin").write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        load_state(tmp_path / "s")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=3))
def test_csv_roundtrip_is_exact(row):
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        write_csv(f"{d}/t.csv", ["a", "b", "c"], [row])
        head, data = read_csv(f"{d}/t.csv")
    assert head == ["a", "b", "c"]
    assert data[0].tolist() == row


def test_json_handles_numpy(tmp_path):
    write_json(tmp_path / "x.json", {"a": np.arange(3), "b": np.float64(1.5), "c": np.bool_(True)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": [0, 1, 2], "b": 1.5, "c": True}
