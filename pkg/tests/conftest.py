import numpy as np
import pytest

from gradsr.nn import Tensor, backward


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_grad(f, x: np.ndarray, coords, step: float = 1e-4) -> dict:
    """Central finite differences of scalar f(x) at selected flat coordinates."""
    x = x.copy()
    flat = x.reshape(-1)
    out = {}
    for c in coords:
        orig = flat[c]
        flat[c] = orig + step
        plus = f(x)
        flat[c] = orig - step
        minus = f(x)
        flat[c] = orig
        out[c] = (plus - minus) / (2.0 * step)
    return out


def check_grad(f_tensor, x: np.ndarray, n_coords: int = 50, step: float = 1e-4,
               rtol: float = 1e-3, rng=None, atol: float = 1e-6) -> float:
    """Compare autodiff grads of scalar-valued f_tensor against central FD.

    Returns the worst relative error over the sampled coordinates.
    """
    rng = rng or np.random.default_rng(0)
    t = Tensor(x.copy(), requires_grad=True)
    loss = f_tensor(t)
    backward(loss)
    assert t.grad is not None, "no gradient reached the input"
    analytic = t.grad.reshape(-1)

    coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    numeric = finite_difference_grad(lambda a: f_tensor(Tensor(a)).item(), x, coords, step)
    worst = 0.0
    for c, fd in numeric.items():
        denom = max(abs(fd), abs(analytic[c]), atol)
        rel = abs(analytic[c] - fd) / denom
        worst = max(worst, rel)
        assert rel <= rtol, (f"coord {c}: analytic {analytic[c]:.8g} vs "
                             f"finite-diff {fd:.8g} (rel {rel:.3g})")
    return worst
