"""Bundled example systems."""

import json
from pathlib import Path

import pandas as pd

from .errors import IoError

COLUMNS = ["name", "dimension", "variables", "vector_field", "nu", "rescaling", "flow", "description"]


def _directory() -> Path:
    return Path(__file__).parent / "systems"


def names() -> list:
    """Names of the bundled systems, sorted."""
    return sorted(p.stem for p in _directory().glob("*.json"))


def path(name: str) -> Path:
    """Location of a bundled system file.

    Parameters
    ----------
    name : str
        system name with or without the ``.json`` suffix (e.g. "scaling2d")

    Returns
    -------
    Path
        path to the JSON document

    Raises
    ------
    IoError
        if there is no bundled system of that name
    """
    file_path = _directory() / (name if name.endswith(".json") else f"{name}.json")
    if not file_path.is_file():
        raise IoError(f"no bundled system named {name!r}, available: {names()}")
    return file_path


def systems(dimension: int = None, search: str = None, *args, **kwargs):
    """Get the bundled example systems.

    Parameters
    ----------
    dimension : int, optional
        keep only systems of this dimension, by default None
    search : str, optional
        phrase to search for in the description, by default None

    Returns
    -------
    pd.DataFrame
        one row per system
    """
    rows = []
    for file_path in sorted(_directory().glob("*.json")):
        doc = json.loads(file_path.read_text())
        rows.append(
            {
                "name": file_path.stem,
                "dimension": doc["dimension"],
                "variables": ", ".join(doc["variables"]),
                "vector_field": ", ".join(doc["vector_field"]),
                "nu": doc["nu"],
                "rescaling": doc.get("rescaling"),
                "flow": "flow" in doc,
                "description": doc.get("description", ""),
            }
        )

    df = pd.DataFrame(rows, columns=COLUMNS)

    if dimension:
        df = df.loc[df["dimension"] == dimension]

    if search:
        df = df.loc[df["description"].str.contains(search, case=False, na=False)]

    return df.reset_index(drop=True)
