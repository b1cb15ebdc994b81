import json

import pytest

from grslab.verifier_cli import (
    EXIT_BUILD,
    EXIT_CONFIG,
    EXIT_PASS,
    ConfigError,
    build_parser,
    dumps,
    fmt,
    main,
    parse_config_text,
    resolve_config,
    spectrum_csv,
)


def _cfg(*argv):
    return resolve_config(build_parser().parse_args(list(argv)))


def test_config_text_parsing():
    text = "# header\nmodel.spec = sphere:n=2  # inline\n\ngrid.L = 1\ntol.nu2 = 1e-7\n"
    assert parse_config_text(text) == {"model.spec": "sphere:n=2", "grid.L": "1", "tol.nu2": "1e-7"}


@pytest.mark.parametrize("text", ["model.spec sphere", "spec = sphere:n=2", "tol.bogus = 1", "grid.colour = red", "= 3"])
def test_bad_config_lines(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_command_line_overrides_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.spec = sphere:n=3\ngrid.L = 3\nout.json = a.json\n")
    cfg = _cfg("spectrum", "--config", str(path), "--L", "1")
    assert cfg.degree == 1 and cfg.model.kind == "sphere"
    assert cfg.out_csv == "a.csv"
    assert cfg.echo["grid.L"] == "1"


@pytest.mark.parametrize(
    "argv",
    [
        ["verify"],
        ["verify", "--model", "sphere:n=x"],
        ["verify", "--model", "sphere:n=2", "--res", "12xq"],
        ["verify", "--model", "sphere:n=2", "--L", "-1"],
    ],
)
def test_resolve_config_rejects(argv):
    with pytest.raises(ConfigError):
        _cfg(*argv)


def test_tolerance_override(tmp_path):
    path = tmp_path / "tol.cfg"
    path.write_text("model.spec = sphere:n=2\ntol.nu2 = 2e-6\n")
    assert _cfg("verify", "--config", str(path)).tolerances["nu2"] == 2e-6
    path.write_text("model.spec = sphere:n=2\ntol.nu2 = -1\n")
    with pytest.raises(ConfigError):
        _cfg("verify", "--config", str(path))


def test_number_formatting():
    assert fmt(-0.0) == "0" and fmt(0.0) == "0"
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(-2.0) == "-2"
    assert fmt(1.5e-13) == "1.5e-13"


def test_report_encoding_is_valid_json():
    report = {"a": 0.1 + 0.2, "b": [1, -0.0, "x"], "c": {"d": True, "e": None}}
    text = dumps(report)
    back = json.loads(text)
    assert back["a"] == pytest.approx(0.3) and back["b"][1] == 0 and back["c"] == {"d": True, "e": None}
    assert dumps(report) == text


def test_spectrum_csv_layout():
    text = spectrum_csv([(0, -0.0, 1e-15, "1*g"), (1, -2.0, 3e-14, "x*g")])
    assert text.splitlines() == ["index,eigenvalue,residual,tags", "0,0,1e-15,1*g", "1,-2,3e-14,x*g"]


@pytest.mark.parametrize(
    "argv, code",
    [
        (["verify", "--model", "torus:n=2"], EXIT_CONFIG),
        (["verify", "--model", "sphere:n=2", "--res", "1x1"], EXIT_CONFIG),
        (["stability", "--model", "generic:ellipsoid"], EXIT_CONFIG),
        (["verify", "--model", "generic:ellipsoid,a=0"], EXIT_BUILD),
        (["verify", "--model", "sphere:n=2,r=-1"], EXIT_BUILD),
    ],
)
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code
    assert capsys.readouterr().err.startswith("grslab:")


def test_spectrum_run_writes_json_and_csv(tmp_path):
    out = tmp_path / "s2.json"
    assert main(["spectrum", "--model", "sphere:n=2", "--L", "1", "--out", str(out)]) == EXIT_PASS
    report = json.loads(out.read_text())
    assert report["verdict"] == "gap check pass"
    lam1 = next(r for r in report["results"] if r["name"] == "lambda1")
    assert lam1["value"] == pytest.approx(-2.0, abs=1e-6) and lam1["bound"] == pytest.approx(-1.0)
    rows = out.with_suffix(".csv").read_text().splitlines()
    assert rows[0] == "index,eigenvalue,residual,tags" and len(rows) > 1
