import pytest

from icdfs.icd_tree import load_sample_tree
from icdfs.synth import SynthConfig, generate_cohort


@pytest.fixture(scope="session")
def sample_tree():
    return load_sample_tree()


@pytest.fixture(scope="session")
def small_cohort(sample_tree):
    """A few hundred patients; enough structure for fast end-to-end checks."""
    return generate_cohort(sample_tree, SynthConfig(n_patients=300, pilot_records=5000, seed=11))


class DeskCohorts:
    """Desk-scale synthetic cohorts (about 10,000 records), generated once per seed."""

    def __init__(self, tree):
        self.tree = tree
        self._cache = {}

    def __call__(self, seed):
        if seed not in self._cache:
            from icdfs.cohort import SplitSpec, encode_cohort

            cohort = generate_cohort(self.tree, SynthConfig(n_patients=3250, seed=seed))
            ds = encode_cohort(cohort.admissions, cohort.deaths, self.tree, SplitSpec(0.67, seed))
            self._cache[seed] = (cohort, ds, ds.split())
        return self._cache[seed]


@pytest.fixture(scope="session")
def desk_cohorts(sample_tree):
    return DeskCohorts(sample_tree)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
