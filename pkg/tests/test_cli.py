from fractions import Fraction

import pytest

from mrhomog.cli import build_parser, parse_config, run
from mrhomog.errors import ConfigurationError, ValidationError
from mrhomog.io import read_csv, read_json, read_vtk

SMALL = """\
[cell]
dim = 2
radius = 0.25
h = 0.125

[physics]
Re = 1

[macro]
h = 1/8

[fine]
epsilon_list = 1/2, 1/4
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_config_defaults():
    cfg = parse_config("[cell]\nradius = 0.2\n")
    assert cfg.get("cell", "dim") == 2
    assert cfg.get("cell", "h") == 0.05
    assert cfg.get("cell", "shape") == "disk"
    assert cfg.get("fine", "mode") == "hydro2d"
    assert cfg.get("physics", "g") == "swirl"
    assert cfg.get("output", "formats") == ["csv", "json", "vtk"]


def test_epsilon_list_fractions():
    cfg = parse_config("[fine]\nepsilon_list = 1/2,1/4\n")
    assert cfg.epsilons == [0.5, 0.25]
    assert cfg.get("fine", "epsilon_list") == [Fraction(1, 2), Fraction(1, 4)]


@pytest.mark.parametrize("text, key", [
    ("[cell]\nradius = 0.6\n", "radius"),
    ("[cell]\ndim = 4\n", "dim"),
    ("[fine]\nepsilon_list = 1/3, 0.3\n", "epsilon_list"),
    ("[physics]\nRm = 0\n", "Rm"),
    ("[physics]\nAl = 1\n", "Al"),
    ("[physics]\ng = 1, 2, 3\n", "g"),
])
def test_validation_errors_name_the_key(text, key):
    with pytest.raises(ValidationError, match=key):
        parse_config(text)


def test_unknown_key_suggests_nearest():
    with pytest.raises(ConfigurationError, match="radius") as exc:
        parse_config("[cell]\nradus = 0.2\n")
    assert "line 2" in str(exc.value)


def test_unknown_profile_lists_known():
    with pytest.raises(ConfigurationError, match="swirl"):
        parse_config("[physics]\ng = whirl\n")


def test_missing_config_exit_1(tmp_path, capsys):
    code = run(["cell", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "none.ini" in err
    assert read_json(str(tmp_path / "o" / "manifest.json"))["exit_code"] == 1


def test_bad_arguments_exit_1(capsys):
    assert run(["bogus", "--config", "x"]) == 1
    assert run(["cell"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_help_lists_commands():
    txt = build_parser().format_help()
    for c in ("cell", "tensors", "macro", "fine", "converge", "report", "--stage-only", "--deterministic"):
        assert c in txt


def test_tensors_runs_cell_stage(tmp_path):
    out = tmp_path / "o"
    assert run(["tensors", "--config", _write(tmp_path, SMALL), "--out", str(out)]) == 0
    for f in ("cell_solution.npz", "cell.vtk", "tensors.json", "tensors.csv", "tensor_report.json"):
        assert (out / f).exists(), f
    man = read_json(str(out / "manifest.json"))
    assert man["status"] == "ok" and set(man["stages"]) == {"cell", "tensors"}
    assert man["files"]["tensors.json"]["sha256"]
    head, rows = read_csv(str(out / "tensors.csv"))
    assert head[2] == "N1212" and rows[0][2] > 0.5


@pytest.fixture(scope="module")
def converged(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = _write(base, SMALL)
    outs = [base / "a", base / "b"]
    codes = [run(["converge", "--config", cfg, "--out", str(o), "--deterministic"]) for o in outs]
    return codes, outs, cfg


def test_converge_outputs(converged):
    codes, outs, _ = converged
    assert codes == [0, 0]
    out = outs[0]
    head, rows = read_csv(str(out / "convergence.csv"))
    assert head[0] == "epsilon" and [r[0] for r in rows] == [0.5, 0.25]
    assert all(r[-1] == "ok" for r in rows)
    d = read_vtk(str(out / "diff_eps_1_4.vtk"))
    assert "u_minus_u0" in d["point_data"]
    for f in ("macro.npz", "macro.vtk", "fine_eps_1_2.npz", "fine_eps_1_4.json", "convergence.json"):
        assert (out / f).exists(), f


def test_manifest_residuals_within_tolerances(converged):
    man = read_json(str(converged[1][0] / "manifest.json"))
    checked = 0
    for stage, res in man["residuals"].items():
        for key, val in res.items():
            assert val <= man["tolerances"][key], (stage, key)
            checked += 1
    assert checked >= 5
    listed = set(man["files"])
    on_disk = {p.name for p in converged[1][0].iterdir()} - {"manifest.json"}
    assert listed == on_disk


def test_deterministic_runs_identical(converged):
    _, (a, b), _ = converged
    assert (a / "convergence.csv").read_bytes() == (b / "convergence.csv").read_bytes()
    ma, mb = read_json(str(a / "manifest.json")), read_json(str(b / "manifest.json"))
    for m in (ma, mb):
        m.pop("started"), m.pop("finished")
        assert all(s["seconds"] is None for s in m["stages"].values())
    assert ma == mb


def test_stage_only_reuses_outputs(converged, tmp_path):
    _, (a, _), cfg = converged
    before = (a / "convergence.csv").read_bytes()
    assert run(["converge", "--config", cfg, "--out", str(a), "--stage-only", "--deterministic"]) == 0
    man = read_json(str(a / "manifest.json"))
    assert {s: v["source"] for s, v in man["stages"].items()} == {
        "cell": "loaded", "tensors": "loaded", "macro": "loaded", "fine": "loaded", "converge": "computed"}
    assert (a / "convergence.csv").read_bytes() == before


def test_report_command(converged):
    _, (a, _), cfg = converged
    assert run(["report", "--config", cfg, "--out", str(a), "--stage-only"]) == 0
    rep = read_json(str(a / "report.json"))
    assert rep["constants"]["kappa_K"] == pytest.approx(0.5, abs=1e-10)
    assert "satisfied" in rep["smallness"]
    assert len(rep["convergence_csv_sha256"]) == 64


def test_numerical_failure_exit_2(tmp_path, capsys):
    text = "[cell]\nradius = 0.25\nh = 0.125\n[physics]\nRe = 1e5\n[macro]\nh = 1/8\nmaxit = 3\n"
    out = tmp_path / "o"
    assert run(["macro", "--config", _write(tmp_path, text), "--out", str(out)]) == 2
    assert "Error" in capsys.readouterr().err
    man = read_json(str(out / "manifest.json"))
    assert man["status"] == "numerical failure" and man["exit_code"] == 2
