import numpy as np
import pytest

from set2seq.seq_encoder import ModelSpec, SetSequence, build_model
from set2seq.set_encoders import SetEncoderSpec

SET2SEQ_VARIANTS = ["deepsets", "st_sab_pma", "st_isab_pma", "st_isab_pma_sab"]


def tiny_spec(kind="set2seq", variant="deepsets", pooling="max", **kw):
    enc = SetEncoderSpec(variant=variant, pooling=pooling, d_hidden=4, n_heads=2, n_inducing=3, n_blocks=2)
    opts = dict(hidden=8, n_heads=2, n_layers=2, ff_dim=16)
    opts.update(kw)
    return ModelSpec(kind=kind, set_encoder=enc, **opts)


def random_sequence(rng, n_steps=4, d_in=3, max_inst=4, start=1900, entity_id="x", target=0.5):
    years = start + np.cumsum(rng.integers(0, 3, size=n_steps))
    sets = [rng.normal(size=(int(rng.integers(1, max_inst + 1)), d_in)) for _ in range(n_steps)]
    return SetSequence.from_sets(entity_id, years, sets, target)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_sample():
    """Two timesteps, three instances in total."""
    r = np.random.default_rng(7)
    return SetSequence.from_sets("toy", [1901, 1903], [r.uniform(-2, 2, (2, 3)), r.uniform(-2, 2, (1, 3))], 0.7)


def make_model(spec, sample, seed=0):
    return build_model(spec, sample.feature_dim, sample.years, seed)


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Record one acceptance line; printed live and again in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
