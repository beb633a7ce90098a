import pytest

from integrasym import catalog
from integrasym.errors import IoError


def test_names():
    assert catalog.names() == ["quadratic2d", "rigidbody3d", "rigidbody3d_rescaled", "scaling2d"]


def test_systems_table():
    df = catalog.systems()
    assert list(df.columns) == catalog.COLUMNS
    assert len(df) == 4
    row = df.loc[df["name"] == "quadratic2d"].iloc[0]
    assert row["vector_field"] == "x1^2, x1*x2"
    assert bool(row["flow"])


def test_systems_filter_dimension():
    df = catalog.systems(dimension=3)
    assert sorted(df["name"]) == ["rigidbody3d", "rigidbody3d_rescaled"]
    assert list(df.index) == [0, 1]


def test_systems_search():
    df = catalog.systems(search="RIGID BODY")
    assert set(df["name"]) == {"rigidbody3d", "rigidbody3d_rescaled"}
    assert catalog.systems(search="no such phrase").empty


def test_path():
    assert catalog.path("scaling2d").name == "scaling2d.json"
    assert catalog.path("scaling2d.json") == catalog.path("scaling2d")
    with pytest.raises(IoError):
        catalog.path("pendulum")
