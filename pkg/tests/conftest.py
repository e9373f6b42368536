import hashlib
from pathlib import Path

import numpy as np
import pytest

from cvpbench import cauchy_green as cg
from cvpbench import cli_runner
from cvpbench import config
from cvpbench import qft_state as qs
from cvpbench.action_el import ActionConfig
from cvpbench.foliation import Foliation, FormAssembler
from cvpbench.jets import PairTable, TestJetBasis, assemble_delta
from cvpbench.space_measure import build_scenario

ACCEPTANCE_LINES = []


def artifact_digests(run_dir):
    """SHA-256 of every file under a run directory except the timed manifest."""
    root = Path(run_dir)
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


class Scenario:
    """Shared objects of one built-in scenario."""

    def __init__(self, name):
        self.cfg = config.resolve({"scenario": name})
        self.measure, self.kernel, self.metric = build_scenario(self.cfg)
        self.action = ActionConfig.from_config(self.cfg, self.measure, self.kernel)
        self.basis = TestJetBasis.from_config(self.cfg, self.measure.n, self.measure.dimension)
        self.table = PairTable.build(self.measure, self.kernel)
        self.delta = assemble_delta(self.measure, self.kernel, self.metric, self.basis, self.action,
                                    table=self.table)
        self.asm = FormAssembler(table=self.table)
        f = self.cfg["foliation"]
        self.fol = Foliation.from_points(self.measure.points, f["time_axis"], f["delta"])
        self.fol2 = Foliation.from_points(self.measure.points, f["time_axis"], 2 * f["delta"])


@pytest.fixture(scope="session")
def gaussian():
    return Scenario("gaussian_example")


@pytest.fixture(scope="session")
def lattice():
    return Scenario("causal_lattice")


@pytest.fixture(scope="session")
def lattice_green(lattice):
    return cg.build_green_operators(lattice.delta, lattice.asm, lattice.fol, lattice.cfg["solver"])


@pytest.fixture(scope="session")
def lattice_green2(lattice):
    return cg.build_green_operators(lattice.delta, lattice.asm, lattice.fol2, lattice.cfg["solver"])


@pytest.fixture(scope="session")
def lattice_causal(lattice):
    return cg.build_causal_structure(lattice.measure, lattice.kernel, lattice.cfg)


@pytest.fixture(scope="session")
def lattice_fields(lattice_green):
    return qs.build_field_space(lattice_green)


@pytest.fixture(scope="session")
def lattice_state(lattice, lattice_green, lattice_fields):
    t = qs.admissible_times(lattice_green, lattice.asm, lattice.fol)[1]
    fr = lattice.asm.forms(lattice.fol, t).reduced(lattice.delta.reduced()["E"])
    cs = qs.build_complex_structure(lattice_fields, fr, lattice.cfg["state"]["eps_T"], t, lattice.fol.name)
    return fr, cs, qs.quasi_free_state(lattice_fields, cs)


@pytest.fixture(scope="session")
def lattice_runs(tmp_path_factory):
    """Two full pipeline runs of causal_lattice in separate run roots."""
    return [cli_runner.run_pipeline("causal_lattice", root=tmp_path_factory.mktemp(f"lat{i}")) for i in range(2)]


@pytest.fixture(scope="session")
def gaussian_runs(tmp_path_factory):
    """Two full pipeline runs of gaussian_example in separate run roots."""
    return [cli_runner.run_pipeline("gaussian_example", root=tmp_path_factory.mktemp(f"gau{i}")) for i in range(2)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
