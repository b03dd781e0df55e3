import math

import numpy as np
import pytest

from perchsim import statics

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_chain(rng: np.random.Generator) -> statics.ArmChain:
    n = int(rng.integers(3, 5))
    lengths = [float(rng.uniform(0.012, 0.025))]
    for _ in range(n - 1):
        lengths.append(float(rng.uniform(0.025, 0.05)))
    lengths.append(float(rng.uniform(0.025, 0.045)))
    joints = tuple(statics.JointSpec(float(rng.uniform(0.05, 0.5)),
                                     math.radians(float(rng.uniform(60, 110))))
                   for _ in range(n))
    mu = tuple(float(rng.uniform(0.3, 1.0)) for _ in range(n))
    return statics.ArmChain(lengths, joints, mu)


def random_large_cases(count: int, seed: int = 0, all_in_contact: bool = False):
    """(chain, diameter, solution) triples with a valid full-contact layout."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        chain = random_chain(rng)
        d = float(rng.uniform(0.080, 0.110))
        try:
            sol = statics.analyze_large_branch(chain, statics.BranchSpec(d))
        except statics.NoContactConfiguration:
            continue
        if all_in_contact and not sol.in_contact.all():
            continue
        out.append((chain, d, sol))
    return out


@pytest.fixture(scope="session")
def mech():
    return statics.default_mechanism()
