import numpy as np
import pytest


def life_reference(field):
    """Plain-loop Life step on the torus, written independently of the package."""
    f = np.asarray(field)
    h, w = f.shape
    out = np.zeros_like(f)
    for y in range(h):
        for x in range(w):
            n = 0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dy or dx:
                        n += f[(y + dy) % h, (x + dx) % w]
            out[y, x] = 1 if n == 3 or (n == 2 and f[y, x]) else 0
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_soft_network(seed, grid=(4, 4), m=2, d=4, widths=(12, 6)):
    """Small relaxed network with spread-out logits and a soft attention slope."""
    from boolfield.network import build_network
    r = np.random.default_rng(seed)
    return build_network(grid=grid, m=m, d=d, n_layers=1, kernel_widths=widths, seed=seed,
                         noise=1.0, pass_bias=0.0, bias=float(r.uniform(-0.5, 0.5)),
                         lam=4.0, use_position=True)


def finite_difference_errors(net, x, y, h=1e-4, floor=1e-8):
    """Relative error between backprop and central differences, one entry
    per scalar parameter."""
    from boolfield.network import get_parameters, set_parameters
    from boolfield.training import compute_gradients

    def value():
        return compute_gradients(net, x, y)[0]

    _, grads = compute_gradients(net, x, y)
    errors = []
    for key, arr in get_parameters(net).items():
        flat = np.array(arr, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for sign in (1, -1):
                flat[i] = orig + sign * h
                set_parameters(net, {key: flat.reshape(np.shape(arr))})
                vals.append(value())
            flat[i] = orig
            set_parameters(net, {key: flat.reshape(np.shape(arr))})
            fd = (vals[0] - vals[1]) / (2 * h)
            g = float(np.reshape(grads[key], -1)[i])
            errors.append(abs(g - fd) / max(abs(g), abs(fd), floor))
    return np.array(errors)


NEIGHBORHOODS = (
    {"kind": "von_neumann4"},
    {"kind": "moore8"},
    {"kind": "radius", "radius": 2, "metric": "manhattan"},
    {"kind": "radius", "radius": 2, "metric": "chebyshev", "include_center": True},
)


def random_hard_network(rng, grid=None, nb=None):
    """A hardened network with every structural knob drawn at random."""
    from boolfield.manifold import Neighborhood, TorusGrid
    from boolfield.network import UPSCALE_MODES, build_network, harden_network
    grid = grid or (int(rng.integers(1, 6)), int(rng.integers(1, 71)))
    nb = Neighborhood.from_dict(nb or NEIGHBORHOODS[rng.integers(len(NEIGHBORHOODS))])
    m = int(rng.integers(1, 4))
    n = len(nb.offsets(TorusGrid(*grid)))
    first = -(-m * (n + 1) // 2) + int(rng.integers(0, 4))
    widths = [first, max(m, first // 2)]
    net = build_network(grid=grid, neighborhood=nb, m=m, d=int(rng.choice([2, 4])),
                        n_layers=int(rng.integers(1, 3)), kernel_widths=widths,
                        seed=int(rng.integers(2**31)), steps=int(rng.integers(1, 3)),
                        upscale=UPSCALE_MODES[rng.integers(3)], bias=float(rng.uniform(-1, 1)),
                        use_position=bool(rng.integers(2)), noise=3.0, pass_bias=0.0)
    return harden_network(net)


# One line per acceptance criterion, printed after the run.
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
