import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

#: PASS/FAIL lines registered by the acceptance tests
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


TOY_GENOTYPE = """line_id,M1,M2
A,0,0
B,1,1
C,1,0
"""

TOY_PHENOTYPE = """obs_id,line_id,value
o1,A,1.5
o2,B,2.5
o3,C,0.5
"""

TOY_LAYOUT = """obs_id,row,col
o1,1,1
o2,1,2
o3,1,3
"""

TOY_SUBPOP = """obs_id,subpop_label
o1,S1
o2,S1
o3,S2
"""


@pytest.fixture
def toy_files(tmp_path):
    """The 3-line hand-written dataset (n=3, p=2, 1x3 lattice)."""
    paths = {}
    for name, content in (
        ("genotype", TOY_GENOTYPE),
        ("phenotype", TOY_PHENOTYPE),
        ("layout", TOY_LAYOUT),
        ("subpop", TOY_SUBPOP),
    ):
        path = tmp_path / f"{name}.csv"
        path.write_text(content)
        paths[name] = str(path)
    return paths
