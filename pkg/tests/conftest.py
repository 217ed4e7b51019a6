import numpy as np
import pytest
import torch

from eraque.synth import SynthConfig, generate_synth_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 contents x 4 clips x 6 frames at 72x128; shared, treat as read-only."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    manifest = generate_synth_corpus(
        SynthConfig(num_contents=4, clips_per_content=4, frames_per_clip=6, rng_seed=3), out)
    return out, manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
