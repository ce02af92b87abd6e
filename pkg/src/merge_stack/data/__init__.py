"""Shipped scenario documents and the leader disturbance profile."""
from importlib import resources


def scenario_text(name: str) -> str:
    """Contents of a shipped scenario document, e.g. scenario_text('scenario1')."""
    return resources.files(__package__).joinpath(f"{name}.toml").read_text("utf-8")


def data_path(filename: str):
    """Filesystem path of a shipped data file (valid for installed packages
    backed by real files, which covers this repo's layouts)."""
    return resources.files(__package__).joinpath(filename)
