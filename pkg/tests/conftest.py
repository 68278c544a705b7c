import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hspk.config import DataSection, DiscriminatorSection, GeneratorSection, RunConfig, SpeckleSection, TrainSection
from hspk.data import build_dataset, gen_synthetic_labels
from hspk.data.dataset import label_source_synthetic
from hspk.speckle import build_tm

settings.register_profile(
    "hspk",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("hspk")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_conv2d(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation used as an independent oracle."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
    xp[:, :, padding : padding + H, padding : padding + W] = x
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def tiny_config(seed=0, **train) -> RunConfig:
    cfg = RunConfig(seed=seed, figures=False)
    cfg.speckle = SpeckleSection(slm_extent=8, camera_extent=32)
    cfg.generator = GeneratorSection(encoder_channels=[4, 8, 8, 8], tfrm_channels=[2, 2, 2])
    cfg.discriminator = DiscriminatorSection(channels=[4, 8])
    cfg.data = DataSection(n_labels=48)
    cfg.train = TrainSection(**{"epochs": 1, "batch_size": 4, "val_records": 4, **train})
    return cfg


@pytest.fixture(scope="module")
def tiny_sets():
    cfg = tiny_config()
    sp = cfg.speckle.build()
    labels = gen_synthetic_labels(48, 32, seed=11)
    tms = [build_tm(sp.seed, sp.n_outputs, sp.n_inputs, c) for c in range(3)]
    return build_dataset(labels, tms, sp, label_source=label_source_synthetic(48, 32, 11))


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
