import numpy as np
import pytest
import torch

from thor.data import PhantomSpec, generate_phantom
from thor.denoiser import DenoiserConfig, build_model
from thor.noise import NoiseSpec
from thor.schedules import make_linear_schedule

TOY_SIZE = (16, 16)


def toy_model(schedule, noise=NoiseSpec(), seed=0):
    """Untrained tiny network with a non-zero output layer so predictions vary."""
    model = build_model(DenoiserConfig(base_channels=8, depth=2, time_embed_dim=16, image_size=TOY_SIZE),
                        schedule, noise, seed)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.net.out.weight.copy_(0.05 * torch.randn(model.net.out.weight.shape, generator=g))
    return model


@pytest.fixture(scope="session")
def toy_schedule():
    return make_linear_schedule(100, 1e-4, 0.05)


@pytest.fixture(scope="session")
def toy(toy_schedule):
    return toy_model(toy_schedule)


@pytest.fixture(scope="session")
def toy_images():
    return np.stack([generate_phantom(PhantomSpec(seed=s, size=TOY_SIZE, n_structures=(1, 2))) for s in range(3)])


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
