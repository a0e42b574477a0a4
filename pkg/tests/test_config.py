import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqjscc.config import RunConfig, format_config, load_config, parse_config, write_config
from vqjscc.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(format_config(cfg)) == cfg
    assert cfg.eval.realizations == 50


@settings(max_examples=30, deadline=None)
@given(
    st.integers(0, 10**6),
    st.floats(1e-6, 1e-2),
    st.lists(st.floats(0.01, 10, allow_nan=False), min_size=5, max_size=5),
    st.integers(1, 64),
)
def test_round_trip_property(seed, lr, alpha, T):
    text = (
        f"[run]\nseed = {seed}\n[train]\nlr = {lr!r}\nalpha = {', '.join(map(repr, alpha))}\n"
        f"T_min = {T}\nT_max = {T + 3}\n[eval]\ncoherence = {T}\n"
    )
    cfg = parse_config(text)
    assert cfg.codec.seed == seed and cfg.train.seed == seed
    assert parse_config(format_config(cfg)) == cfg


def test_partial_file_and_overrides(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[codec]\nc1 = 8\nc2 = 12\n[eval]\nsnr_grid = 3, 9\n")
    cfg = load_config(p)
    assert (cfg.codec.c1, cfg.codec.c2) == (8, 12)
    assert cfg.eval.snr_grid == (3.0, 9.0)
    assert cfg.with_seed(5).codec.seed == 5
    write_config(cfg, tmp_path / "out.ini")
    assert load_config(tmp_path / "out.ini") == cfg


@pytest.mark.parametrize(
    "text",
    [
        "[nope]\nx = 1\n",
        "[run]\nsede = 1\n",
        "[run]\nseed = abc\n",
        "[run]\nprecision = f16\n",
        "[codec]\nH = 10\n",
        "[train]\nr1 = 1, 2\n",
        "not a config",
    ],
)
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent.ini")
