import time
import warnings
from types import SimpleNamespace

import pytest

from dmrikq.dae import TrainingConfig, train_dae
from dmrikq.experiment import TrendConfig, train_prior
from dmrikq.signal_model import DictConfig, generate_dictionary, make_scheme

Q_SMALL = 30


@pytest.fixture(scope="session")
def trained_q30():
    """One Q=30 denoiser with default training settings, shared by the DAE and acceptance tests."""
    scheme = make_scheme(Q_SMALL)
    z = generate_dictionary(DictConfig(n_atoms=12000), scheme, seed=2)
    held_out = generate_dictionary(DictConfig(n_atoms=1000), scheme, seed=99)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)    # fewer atoms than 10x parameters
        model, report = train_dae(z, TrainingConfig(seed=3))
    return SimpleNamespace(model=model, report=report, dictionary=z, held_out=held_out.atoms.T,
                           scheme=scheme, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def trained_q60():
    """The default Q=60 prior used by the phantom experiments."""
    cfg = TrendConfig()
    scheme = make_scheme(cfg.q)
    t0 = time.perf_counter()
    model, report = train_prior(scheme, cfg)
    held_out = generate_dictionary(cfg.dictionary, scheme, seed=99)
    return SimpleNamespace(model=model, report=report, config=cfg, held_out=held_out.atoms.T,
                           seconds=time.perf_counter() - t0)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Call with (criterion number, label, passed, detail); lines are echoed in the summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, label, passed, detail):
        lines.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {label} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
