import numpy as np
import pytest

from dtln.models import TopologySpec, build_model


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: training-based checks that take minutes")


def numeric_grad(f, x, delta=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``x`` (modified in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + delta
        fp = f()
        x[idx] = old - delta
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * delta)
    return g


def rel_error(a, b, floor=1e-6):
    """Worst element-wise relative error, with an absolute floor for near-zero entries."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CORES = {
    "dual": (("stft", 2), ("learned", 2)),
    "stft4": (("stft", 4),),
    "learned4": (("learned", 4),),
    "stft_stft": (("stft", 2), ("stft", 2)),
    "learned_learned": (("learned", 2), ("learned", 2)),
}


def tiny_model(cores, seed=0, jitter=0.3):
    """Small-shape model (L=16, hop=4, N=6, H=3) with non-trivial biases for gradient checks."""
    spec = TopologySpec("tiny", cores, 3, feature_size=6, frame_len=16, hop=4)
    p = build_model(spec, seed)
    r = np.random.default_rng(seed + 99)
    for k in p.tensors:
        p.tensors[k] = p.tensors[k] + jitter * r.standard_normal(p.tensors[k].shape)
    return p


# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
