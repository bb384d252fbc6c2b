"""Model files shipped with the package."""
from importlib import resources

from ..model_lang import FactoredMdp, parse_model

SHIPPED = ("taxi", "cleaning_robot")


def model_path(name: str):
    return resources.files(__package__) / f"{name}.pm"


def model_text(name: str) -> str:
    if name not in SHIPPED:
        raise KeyError(f"no shipped model named {name!r}; choose from {SHIPPED}")
    return model_path(name).read_text(encoding="utf-8")


def load_shipped(name: str) -> FactoredMdp:
    return parse_model(model_text(name))
