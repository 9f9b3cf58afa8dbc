import pytest
from hypothesis import given
from hypothesis import strategies as st

from plasmalab.config import (
    ENV_OUT,
    ENV_WORKERS,
    ConfigError,
    RunConfig,
    build_config,
    env_settings,
    parse_settings,
)


def test_defaults_are_valid():
    cfg = build_config(env={})
    assert cfg == RunConfig(tolerances={})
    assert cfg.lmax == 2 and cfg.grid == 1024


def test_parse_file_format():
    text = """
    # comment line
    dimension = 3
    exponent = 1.5   # trailing comment
    grid = 512
    lambda_max = auto
    lambda-step = 0.25
    checks = disc_equality, kernel_structure
    tol.multiplier_identity = 1e-8
    tol.kernel_structure.t_image = 1e-5
    """
    s = parse_settings(text.splitlines())
    assert s["dimension"] == 3 and s["exponent"] == 1.5 and s["grid"] == 512
    assert s["lambda_max"] is None and s["lambda_step"] == 0.25
    assert s["checks"] == ("disc_equality", "kernel_structure")
    assert s["tolerances"] == {"multiplier_identity": 1e-8, "kernel_structure.t_image": 1e-5}


@pytest.mark.parametrize("line", ["grid 12", "grid = 12.5", "colour = red", "tol.x = abc", "dimension = two"])
def test_parse_errors(line):
    with pytest.raises(ConfigError):
        parse_settings([line])


def test_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("grid = 256\nout = from-file\nworkers = 2\nseed = 5\n")
    env = {ENV_OUT: "from-env", ENV_WORKERS: "3"}
    cfg = build_config(file=str(f), env=env, seed=None, workers=4)
    assert cfg.grid == 256
    assert cfg.out == "from-env"
    assert cfg.workers == 4
    assert cfg.seed == 5


def test_env_settings():
    assert env_settings({}) == {}
    assert env_settings({ENV_OUT: "x", ENV_WORKERS: "2"}) == {"out": "x", "workers": 2}
    with pytest.raises(ConfigError):
        env_settings({ENV_WORKERS: "many"})


def test_missing_file():
    with pytest.raises(ConfigError):
        build_config(file="/nonexistent/plasmalab.cfg", env={})


@pytest.mark.parametrize(
    "overrides",
    [
        {"grid": 16},
        {"grid": 10**6},
        {"dimension": 1},
        {"dimension": 3, "exponent": 3.0},
        {"exponent": 1.0},
        {"lambda_max": -1.0},
        {"lambda_step": 0.0},
        {"lmax": 1},
        {"tol": 0.0},
        {"tol": 1e-2},
        {"workers": 0},
        {"seed": -1},
        {"checks": ("no_such_check",)},
        {"lambda_cap": 0.0},
    ],
)
def test_invalid_values_rejected(overrides):
    with pytest.raises(ConfigError):
        build_config(env={}, **overrides)


@pytest.mark.parametrize(
    "tolerances",
    [{"no_such_check": 1.0}, {"kernel_structure.nope": 1.0}, {"multiplier_identity": -1.0}, {"multiplier_identity": float("nan")}],
)
def test_invalid_tolerances_rejected(tolerances):
    with pytest.raises(ConfigError):
        RunConfig(tolerances=tolerances).validate()


@given(st.sampled_from([2, 3]), st.floats(1.01, 2.99), st.integers(32, 4096))
def test_valid_region_accepted(N, p, M):
    cfg = build_config(env={}, dimension=N, exponent=p, grid=M)
    assert (cfg.dimension, cfg.exponent, cfg.grid) == (N, p, M)


def test_zero_tolerance_is_allowed():
    assert RunConfig(tolerances={"multiplier_identity": 0.0}).validate().tolerances == {"multiplier_identity": 0.0}
