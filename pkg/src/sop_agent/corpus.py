"""SOP documents and benchmark cases bundled with the package."""

from __future__ import annotations

from importlib import resources

from .bench import CaseSpec, load_case
from .sop_format import SopDocument, parse_sop

SOP_NAMES = (
    "service_interruption_crude",
    "service_interruption_refined",
    "alfworld",
    "hotpotqa",
    "code_generation",
    "data_cleaning",
)
CASE_NAMES = ("service_interruption_crude", "service_interruption_refined")


def _data():
    return resources.files(__package__) / "data"


def sop_text(name: str) -> str:
    return (_data() / f"{name}.sop").read_text(encoding="utf-8")


def load_sop(name: str) -> SopDocument:
    return parse_sop(sop_text(name), f"{name}.sop")


def case_text(name: str) -> str:
    return (_data() / f"{name}.case").read_text(encoding="utf-8")


def load_bundled_case(name: str) -> CaseSpec:
    return load_case(case_text(name), name)


def data_path(filename: str):
    """Filesystem path of a bundled data file (usable as a CLI argument)."""
    return _data() / filename
