import functools

import pytest

from occlandmarks.backbone import BackboneConfig
from occlandmarks.model import DecodeConfig, LandmarkModel, ModelConfig
from occlandmarks.synth import synthesize_sample
from occlandmarks.train import prepare_samples
from occlandmarks.visibility import VisibilityHeadConfig


@functools.cache
def _samples(n: int, offset: int):
    return tuple(synthesize_sample([offset, i]) for i in range(n))


@functools.cache
def _prepared(n: int, offset: int, crop: int):
    return prepare_samples(list(_samples(n, offset)), (crop, crop), 4)


@pytest.fixture
def samples():
    return lambda n, offset=0: list(_samples(n, offset))


@pytest.fixture
def prepared():
    return lambda n, offset=0, crop=64: _prepared(n, offset, crop)


def micro_model(stacks=1, channels=8, crop=32, seed=0, fusion="gated", scales=2, temperature=1.0):
    cfg = ModelConfig(
        BackboneConfig(stacks=stacks, channels=channels, crop_size=(crop, crop), scales=scales, seed=seed),
        VisibilityHeadConfig(psi_channels=4, local_depth=1, context_width=4, fusion=fusion, seed=seed + 1),
        DecodeConfig(temperature=temperature),
    )
    return LandmarkModel(cfg)


@pytest.fixture
def make_model():
    return micro_model


# acceptance criteria report: test_acceptance records one verdict per criterion
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
