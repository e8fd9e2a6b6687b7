"""Small FCIDUMP fixtures shipped with the package (hydrogen chains and dimers)."""

from __future__ import annotations

from importlib import resources

from qnpsqd.integrals import IntegralSet, parse_fcidump

FIXTURES = (
    "h2a_sto3g",
    "h2b_sto3g",
    "h2dimer_sto3g",
    "h4_631g",
    "h4_sto3g",
    "h6_sto3g",
)


def fixture_text(name: str) -> str:
    if name not in FIXTURES:
        raise FileNotFoundError(f"no fixture named {name!r}; available: {', '.join(FIXTURES)}")
    return resources.files(__name__).joinpath(f"{name}.fcidump").read_text()


def load_fixture(name: str) -> IntegralSet:
    """Integrals of a packaged fixture, e.g. ``load_fixture("h4_sto3g")``."""
    return parse_fcidump(fixture_text(name))
