"""Question answering over tabular views of scholarly knowledge."""

from pathlib import Path

__version__ = "0.1.0"

_FIXTURES = Path(__file__).parent / "fixtures"


def fixtures_dir() -> Path:
    """Directory of bundled fixtures (sample table and mini benchmark)."""
    return _FIXTURES


def table1_csv_path() -> Path:
    return _FIXTURES / "table1.csv"


def mini_bundle_dir() -> Path:
    return _FIXTURES / "mini_bundle"
