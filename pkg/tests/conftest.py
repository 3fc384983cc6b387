import pytest

from strategies import TABLE1_CSV
from tsqa.table_model import parse_table


@pytest.fixture
def table1():
    return parse_table(TABLE1_CSV, "t1", title="Scholarly representations")
