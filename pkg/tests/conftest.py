
import numpy as np
import pytest

from opacity_field.autodiff import Tensor, backward, default_dtype, tape_scope


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn`` at float64 array ``x``."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn(x)
        flat[i] = old - eps
        lo = fn(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_grad(build, *arrays, eps=1e-6, rtol=1e-4, atol=1e-8):
    """``build(*tensors) -> scalar Tensor``; compares tape gradients to central differences in float64."""
    with default_dtype(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        with tape_scope():
            ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
            loss = build(*ts)
            backward(loss)
        worst = 0.0
        for k, (t, a) in enumerate(zip(ts, arrays)):
            def f(v, k=k):
                args = [Tensor(x) for x in arrays]
                args[k] = Tensor(v)
                return float(build(*args).data)

            num = numeric_grad(f, a.copy(), eps)
            err = np.abs(t.grad - num) / np.maximum(np.abs(num), np.abs(t.grad)).clip(min=atol / rtol)
            worst = max(worst, float(err.max()) if err.size else 0.0)
        return worst


@pytest.fixture(scope="session")
def tiny_dataset():
    """Four 32x32 fuzzy-sphere views, rendered once per session."""
    from opacity_field.camera import default_rig
    from opacity_field.scene import fuzzy_sphere, generate_dataset, view_schedule

    rig = default_rig(resolution=32)
    views = generate_dataset(fuzzy_sphere(), rig, view_schedule(rig, 4), samples_per_ray=256)
    return rig, views


ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
