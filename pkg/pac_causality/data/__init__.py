"""
Example models shipped with the package.

"""

from importlib import resources

from ..model import Dtmc, parse_model


def example_path(name: str):
    return resources.files(__name__).joinpath(f"{name}.dtmc")


def load_example(name: str) -> Dtmc:
    """
    Load a bundled model by name ("cart" or "relay").

    """
    path = example_path(name)
    if not path.is_file():
        raise ValueError(f"Unknown example model '{name}'")
    return parse_model(path.read_text())
