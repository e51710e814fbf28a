import pytest
from hypothesis import given
from hypothesis import strategies as st

from plap.config import ConfigError, parse_config

MINIMAL = "[experiment]\nkind = run\n"


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.kind == "run" and cfg.params.p == 1.8 and cfg.params.delta == 1.0
    assert cfg.initial == {"kind": "sine"} and cfg.seed == 0


def test_p_parses():
    assert parse_config("[params]\np = 1.8\n" + MINIMAL).params.p == 1.8


def test_p_out_of_interval():
    with pytest.raises(ConfigError, match=r"line 2: p = 2.5 outside the interval \(3/2, 2\]"):
        parse_config("[params]\np = 2.5\n" + MINIMAL)


def test_empty_experiment_section():
    with pytest.raises(ConfigError, match="experiment kind required"):
        parse_config("[params]\np = 1.8\n[experiment]\n")


def test_missing_experiment_section():
    with pytest.raises(ConfigError, match="experiment kind required"):
        parse_config("[params]\np = 1.8\n")


def test_duplicate_key_both_lines():
    text = "[params]\np = 1.8\nmu = 0.1\np = 1.7\n" + MINIMAL
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    msg = str(err.value)
    assert "duplicate key 'p'" in msg and "line 4" in msg and "line 2" in msg


@pytest.mark.parametrize("text,frag", [
    ("[params]\nq = 1\n", "line 2: unknown key 'q'"),
    ("[bogus]\n", "line 1: unknown section"),
    ("p = 1.8\n", "outside of any [section]"),
    ("[params]\nn_cells = 6.5\n", "line 2: n_cells = '6.5' is not a valid integer"),
    ("[params]\nmu = abc\n", "line 2: mu"),
    ("[params]\njust words\n", "line 2: expected 'key = value'"),
    ("[params]\nmu = -1\n", "line 2: mu = -1.0 must be >= 0"),
    ("[scheme]\nmode = sideways\n", "unknown scheme mode"),
    ("[params]\nmu = nan\n", "line 2: mu"),
])
def test_rejections(text, frag):
    with pytest.raises(ConfigError) as err:
        parse_config(text + MINIMAL)
    assert frag in str(err.value)


def test_unknown_kind():
    with pytest.raises(ConfigError, match="not one of"):
        parse_config("[experiment]\nkind = dance\n")


def test_sweep_values_validated():
    with pytest.raises(ConfigError, match="line 2: sweep p"):
        parse_config("[sweep]\np = 1.7, 2.2\n" + MINIMAL)


def test_ladder_requirements():
    with pytest.raises(ConfigError, match="ladder"):
        parse_config("[sweep]\ndelta = 0, 1\n[experiment]\nkind = ladder\n")
    with pytest.raises(ConfigError, match="at least two"):
        parse_config("[sweep]\nnu = 0.1\n[experiment]\nkind = ladder\n")


def test_dual_needs_mu():
    with pytest.raises(ConfigError, match="mu > 0"):
        parse_config("[params]\nmu = 0\n[experiment]\nkind = dual_check\n")


def test_lists_and_rows():
    cfg = parse_config("[initial]\nkind = sine\nmodes = 1, 2; 3, 1\namplitudes = 1.0, -0.5\n"
                       "[params]\ndim = 2\n" + MINIMAL)
    assert cfg.initial["modes"] == [[1, 2], [3, 1]] and cfg.initial["amplitudes"] == [1.0, -0.5]


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\n[params]   \np = 1.7  # inline\n\n" + MINIMAL)
    assert cfg.params.p == 1.7


FULL = """
[params]
p = 1.65
mu = 0.25
nu = 0.01
delta = -0.5
alpha = 2.0
dim = 2
n_cells = 31
dt = 0.0005
t_end = 0.05
[scheme]
mode = explicit
snapshot_stride = 3
stop_at_extinction = false
[initial]
kind = indicator
lower = 0.2, 0.3
upper = 0.7, 0.8
amplitudes = 1.0, 0.5
[sweep]
delta = 0, 0.1
[dual]
eta_cells = 8, 4
center = 0.4, 0.5
[galerkin]
modes = 16
[gamma]
seeds = 3, 4
[experiment]
kind = extinction_sweep
output_dir = somewhere
seed = 17
"""


def test_echo_round_trip():
    cfg = parse_config(FULL)
    again = parse_config(cfg.echo())
    assert again == cfg
    assert again.echo() == cfg.echo()


@given(st.floats(1.5001, 2.0), st.floats(0, 5), st.integers(3, 200), st.integers(0, 10**6))
def test_echo_round_trip_property(p, mu, n, seed):
    text = f"[params]\np = {p!r}\nmu = {mu!r}\nn_cells = {n}\n[experiment]\nkind = run\nseed = {seed}\n"
    cfg = parse_config(text)
    assert parse_config(cfg.echo()) == cfg
