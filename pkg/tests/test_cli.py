import json

import numpy as np
import pytest

from integrasym import __version__, catalog
from integrasym.cli import (
    DEGENERATE,
    FAIL,
    PASS,
    RunReport,
    StageResult,
    emit_report,
    load_system,
    main,
    parse_document,
    run_pipeline,
)
from integrasym.errors import (
    ExpressionSyntaxError,
    FileNotFound,
    IoError,
    SchemaError,
)


def raw_document(name):
    return json.loads(catalog.path(name).read_text())


@pytest.fixture(scope="module")
def scaling_report():
    return run_pipeline(load_system("scaling2d"), "all")


@pytest.fixture(scope="module")
def quadratic_report():
    return run_pipeline(load_system("quadratic2d"), "all")


# Documents ============================================================================


def test_load_bundled_systems():
    for name in catalog.names():
        doc = load_system(name)
        assert doc.name == name
        assert doc.system.dimension == doc.dimension
        assert doc.kernel_elements


def test_load_from_file(tmp_path):
    path = tmp_path / "planar.json"
    path.write_text(json.dumps(raw_document("scaling2d")))
    doc = load_system(path)
    assert doc.name == "planar"
    assert doc.seed == 20240101
    assert [k.label for k in doc.kernel_elements] == ["k0", "k1"]


def test_load_rescaled_system():
    doc = load_system("rigidbody3d_rescaled")
    assert doc.rescaling == "1/x3"
    assert doc.nu == "1"
    assert str(doc.system.nu) != "1"


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFound):
        load_system(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{\"dimension\": 2,")
    with pytest.raises(SchemaError):
        load_system(broken)


def test_schema_missing_field():
    raw = raw_document("scaling2d")
    del raw["nu"]
    with pytest.raises(SchemaError) as info:
        parse_document(raw)
    assert info.value.path == "nu"


@pytest.mark.parametrize(
    "key, value, path",
    [
        ("dimension", "2", "dimension"),
        ("dimension", 1, "dimension"),
        ("variables", ["x1", "x1"], "variables"),
        ("variables", ["x1", "sin"], "variables.1"),
        ("vector_field", ["x1"], "vector_field"),
        ("domain", [[0.5, 2.0], [1.0, -1.0]], "domain.1"),
        ("samples", 0, "samples"),
        ("seed", -1, "seed"),
        ("tolerances", {"nonsense": 1.0}, "tolerances.nonsense"),
        ("kernel_elements", [{"matrix": [[1.0, 0.0]]}], "kernel_elements.0.matrix"),
        ("kernel_elements", [{"label": "empty"}], "kernel_elements.0"),
        ("flow", {"epsilon": 0.1, "speed": 2}, "flow"),
        ("flow", {"integrator": "euler"}, "flow"),
    ],
)
def test_schema_errors(key, value, path):
    raw = raw_document("scaling2d")
    raw[key] = value
    with pytest.raises(SchemaError) as info:
        parse_document(raw)
    assert info.value.path == path


def test_expression_error_offset():
    raw = raw_document("scaling2d")
    raw["vector_field"] = ["x1+*2", "x2"]
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_document(raw)
    assert info.value.offset == 3


def test_overrides():
    doc = load_system("scaling2d").with_overrides(seed=7, samples=50, tolerances={"oset": 1e-6})
    assert doc.seed == doc.system.seed == 7
    assert doc.samples == 50
    assert doc.system.tolerances.oset == 1e-6
    with pytest.raises(SchemaError):
        doc.with_overrides(samples=0)


def test_kernel_tolerance_override():
    raw = raw_document("scaling2d")
    raw["kernel_elements"] = [{"expressions": ["u1 + 1e-3*u1^2", "u2"]}]
    doc = parse_document(raw)
    (kernel,) = doc.kernel_elements
    assert 1e-4 < kernel.residual < 1e-1
    assert not kernel.verified
    assert doc.with_overrides(tolerances={"kernel": 1.0}).kernel_elements[0].verified
    raw["tolerances"] = {"kernel": 1.0}
    assert parse_document(raw).kernel_elements[0].verified


# Pipeline =============================================================================


def test_scaling_all(scaling_report):
    assert scaling_report.verdicts == {
        "conservation": PASS,
        "independence": PASS,
        "realization": PASS,
        "admissibility": PASS,
        "linearization": PASS,
        "certificates": PASS,
        "orbit": PASS,
    }
    assert scaling_report.exit_code == 0
    certificates = scaling_report.stages["certificates"].details["certificates"]
    assert len(certificates) == 2
    for cert in certificates:
        assert cert["valid"]
        assert cert["mu_min"] == cert["mu_max"] == 0.0
    assert scaling_report.stages["admissibility"].residual_max == 0.0


def test_quadratic_all(quadratic_report):
    assert set(quadratic_report.verdicts.values()) == {PASS}
    assert "orbit" in quadratic_report.verdicts
    assert quadratic_report.exit_code == 0
    for cert in quadratic_report.stages["certificates"].details["certificates"]:
        assert cert["mu_min"] == pytest.approx(1 / 3, rel=1e-8)
        assert cert["mu_max"] == pytest.approx(1 / 3, rel=1e-8)
    orbits = quadratic_report.stages["orbit"].details["orbits"]
    assert set(orbits) == {"k0", "k1"}
    assert quadratic_report.stages["orbit"].residual_max <= 1e-6


def test_rigid_body_degenerate():
    report = run_pipeline(load_system("rigidbody3d"), "check")
    verdicts = report.verdicts
    assert verdicts["conservation"] == verdicts["realization"] == PASS
    assert verdicts["admissibility"] == DEGENERATE
    details = report.stages["admissibility"].details
    assert details["cause"] == "div X ≡ 0"
    assert "rescale" in details["hint"]
    assert details["rejected"]["oset"] == details["draws"]
    assert report.exit_code == 2


def test_all_stops_at_degenerate_stage():
    report = run_pipeline(load_system("rigidbody3d"), "all")
    assert list(report.verdicts)[-1] == "admissibility"
    assert report.exit_code == 2


@pytest.mark.parametrize("command", ["check", "linearize", "symmetrize"])
def test_rescaled_rigid_body(command):
    report = run_pipeline(load_system("rigidbody3d_rescaled"), command)
    assert report.verdicts
    assert set(report.verdicts.values()) == {PASS}
    assert report.exit_code == 0


def test_orbit_numeric_failure():
    raw = raw_document("quadratic2d")
    # every orbit of x1' = x1^2 leaves the box long before t = 10
    raw["flow"]["horizon"] = 10.0
    raw["samples"] = 100
    report = run_pipeline(parse_document(raw, "quadratic2d"), "demo-flow")
    assert report.verdicts == {"certificates": PASS, "orbit": FAIL}
    assert report.stages["orbit"].numeric_failure
    assert report.stages["orbit"].details["error_type"] == "DomainExit"
    assert report.exit_code == 3


def test_unknown_command():
    with pytest.raises(ValueError):
        run_pipeline(load_system("scaling2d"), "optimize")


# Reports ==============================================================================


def test_report_layout(scaling_report):
    out = scaling_report.as_dict()
    assert list(out) == ["system", "seed", "version", "stages", "verdicts"]
    assert out["version"] == __version__
    stage = out["stages"]["realization"]
    assert list(stage) == ["residual_max", "residual_mean", "points", "verdict", "details"]
    assert "residual_max" not in stage["details"]
    assert "wall_time" in scaling_report.as_dict(timings=True)["stages"]["realization"]


def test_report_non_finite_values():
    report = RunReport("s", 0, __version__)
    report.stages["conservation"] = StageResult(FAIL, residual_max=np.inf, details={"worst": np.nan})
    out = report.as_dict()
    assert out["stages"]["conservation"]["residual_max"] is None
    assert out["stages"]["conservation"]["details"]["worst"] is None
    assert json.loads(emit_report(report, "-"))["verdicts"] == {"conservation": FAIL}


def test_emit_report(scaling_report, tmp_path):
    path = tmp_path / "report.json"
    text = emit_report(scaling_report, path)
    assert path.read_text() == text
    assert json.loads(text)["system"] == "scaling2d"
    with pytest.raises(IoError):
        emit_report(scaling_report, tmp_path / "missing" / "report.json")


def test_reports_are_deterministic(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    emit_report(run_pipeline(load_system("scaling2d"), "all"), first)
    emit_report(run_pipeline(load_system("scaling2d"), "all"), second)
    assert first.read_bytes() == second.read_bytes()


# Command line =========================================================================


def test_main_exit_codes(tmp_path):
    output = tmp_path / "report.json"
    assert main(["all", "-i", "scaling2d", "-o", str(output)]) == 0
    assert json.loads(output.read_text())["verdicts"]["certificates"] == PASS
    assert main(["check", "-i", "rigidbody3d", "-o", str(output)]) == 2
    assert main(["check", "-i", str(tmp_path / "missing.json")]) == 1
    assert main(["check", "-i", "scaling2d", "--tol", "bogus=1"]) == 1
    assert main(["check", "-i", "scaling2d", "--tol", "oset"]) == 1
    assert main(["check", "-i", "scaling2d", "-o", str(tmp_path / "no" / "r.json")]) == 1


def test_main_overrides(tmp_path):
    output = tmp_path / "report.json"
    code = main(["check", "-i", "scaling2d", "--seed", "5", "--samples", "40", "--timings", "-o", str(output)])
    assert code == 0
    out = json.loads(output.read_text())
    assert out["seed"] == 5
    assert out["stages"]["admissibility"]["points"] == 40
    assert "wall_time" in out["stages"]["conservation"]


def test_main_systems(capsys):
    assert main(["systems"]) == 0
    assert "rigidbody3d_rescaled" in capsys.readouterr().out


def test_main_requires_input():
    with pytest.raises(SystemExit):
        main(["check"])
