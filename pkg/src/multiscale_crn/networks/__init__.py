"""Built-in example networks shipped as specification files."""

from importlib import resources

BUILTINS = {"viral": "viral.net", "michaelis-menten": "michaelis-menten.net", "enzyme3": "enzyme3.net"}


def builtin_text(name: str) -> str:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}")
    return resources.files(__name__).joinpath(BUILTINS[name]).read_text(encoding="utf-8")


def load_builtin(name: str):
    from ..network import parse_network

    return parse_network(builtin_text(name))
