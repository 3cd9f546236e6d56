import itertools

import numpy as np
import pytest

from tagdiff.diffusion import gcn_normalize
from tagdiff.nn import init_head, loss_and_gradients
from tagdiff.sparse import SparseMatrix


def random_dense(rng, n, m=None, density=0.2, binary=False, loops=True):
    m = n if m is None else m
    mask = rng.random((n, m)) < density
    vals = np.ones((n, m)) if binary else rng.normal(size=(n, m))
    dense = np.where(mask, vals, 0.0)
    if not loops and n == m:
        np.fill_diagonal(dense, 0.0)
    return dense


def random_graph(rng, n, density=0.2):
    """Binary directed adjacency without self-loops, as (sparse, dense)."""
    dense = random_dense(rng, n, density=density, binary=True, loops=False)
    return SparseMatrix.from_dense(dense), dense


# -- dense oracles --------------------------------------------------------

def dense_gcn(a):
    d = 1.0 / np.sqrt(a.sum(axis=1) + 1.0)
    return d[:, None] * (a + np.eye(len(a))) * d[None, :]


def dense_rw(a):
    deg = a.sum(axis=1)
    w = np.zeros_like(a)
    nz = deg > 0
    w[nz] = a[nz] / deg[nz, None]
    return w.T


def dense_ppr(a, alpha):
    w = dense_rw(a)
    return alpha * np.linalg.inv(np.eye(len(a)) - (1.0 - alpha) * w)


def brute_force_triangles(a):
    """count[i, j] = #{k : i -> k -> j -> i} over distinct i, j, k."""
    n = len(a)
    count = np.zeros((n, n), dtype=np.int64)
    for i, j, k in itertools.permutations(range(n), 3):
        if a[i, k] and a[k, j] and a[j, i]:
            count[i, j] += 1
    return count


# -- gradient checks ---------------------------------------------------------

def fd_relative_error(model, x, adj, labels, idx, weight_decay=0.0, seed=None, eps=1e-5):
    """Largest per-tensor relative error between analytic and central-difference grads."""
    def objective():
        rng = None if seed is None else np.random.default_rng(seed)
        return loss_and_gradients(model, x, adj, labels, idx, weight_decay, rng=rng)[0]

    rng = None if seed is None else np.random.default_rng(seed)
    _, grads = loss_and_gradients(model, x, adj, labels, idx, weight_decay, rng=rng)
    analytic = [g for pair in grads for g in pair]
    worst = 0.0
    for p, g in zip(model.parameters(), analytic):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + eps
            up = objective()
            p[i] = orig - eps
            down = objective()
            p[i] = orig
            num[i] = (up - down) / (2 * eps)
        scale = max(np.max(np.abs(g)), np.max(np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(g - num)) / scale))
    return worst


def tiny_instance(kind, seed, n=6, d=4, c=3, hidden=5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    labels = rng.integers(0, c, size=n)
    model = init_head(kind, d, c, hidden_dim=hidden, seed=seed)
    for layer in model.layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    adj = None
    if kind == "gcn":
        adj = gcn_normalize(random_graph(rng, n, density=0.4)[0])
    return model, x, adj, labels


CYCLE3 = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
K3 = np.ones((3, 3)) - np.eye(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
