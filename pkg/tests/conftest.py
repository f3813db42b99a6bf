import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from atlaslab import DriftSpec, SimConfig, simulate_gap_paths  # noqa: E402
from atlaslab.dynamics import Probe  # noqa: E402
from atlaslab.local_time import default_eps_ladder  # noqa: E402

ATLAS = DriftSpec.atlas1()


@pytest.fixture(scope="session")
def atlas():
    return ATLAS


@pytest.fixture(scope="session")
def stationary_run():
    """Small stationary Atlas ensemble with occupation ladder, probes and Ito terms."""
    cfg = SimConfig(N=16, T=1.0, dt=2.5e-4, k_obs=4, seed=11, record_stride=40)
    probes = [Probe.tabulate(lambda z: np.exp(-z), 1, 2), Probe.tabulate(lambda z: np.exp(-z), 2, 1),
              Probe.tabulate(lambda z: np.ones_like(z), 1, 2)]
    return simulate_gap_paths(ATLAS, 0.0, cfg, default_eps_ladder(cfg.dt), 400, probes=probes,
                              ito_eps=[0.05, 0.1])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
