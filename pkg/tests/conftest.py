import numpy as np
import pytest

from gnngen.graphs import generate_sbm


def finite_difference_check(build, tensors, trials=8, eps=1e-6, rtol=1e-5, rng=None):
    """Central finite differences against reverse-mode gradients.

    `build` recomputes a scalar-output Tensor from the current `tensors` data.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    out = build()
    out.backward()
    for t in tensors:
        flat = t.data.ravel()
        gflat = t.grad.ravel()
        for idx in rng.choice(flat.size, size=min(trials, flat.size), replace=False):
            saved = flat[idx]
            flat[idx] = saved + eps
            f_plus = float(build().data)
            flat[idx] = saved - eps
            f_minus = float(build().data)
            flat[idx] = saved
            numeric = (f_plus - f_minus) / (2 * eps)
            analytic = gflat[idx]
            assert abs(numeric - analytic) <= rtol * max(1.0, abs(numeric), abs(analytic)), (
                f"gradient mismatch at flat index {idx}: numeric {numeric}, analytic {analytic}"
            )


@pytest.fixture(scope="session")
def sbm_graph():
    """Small homophilic SBM used across module tests."""
    return generate_sbm(80, 2, 0.2, 0.02, 8, seed=5)


@pytest.fixture(scope="session")
def desk_graph():
    """The desk-scale fixture from the pipeline defaults."""
    return generate_sbm(300, 2, 0.1, 0.01, 16, seed=42)
