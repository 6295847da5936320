import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multikg import kernels
from multikg.kgdata import KnownFilter
from multikg.models import ModelKind, init_params
from multikg.sampling import NegSampleConfig, worker_rng
from multikg.training import LossConfig, Optimizer, Trainer, TrainerConfig

BACKENDS = kernels.available_backends()
MODES = [kernels.L1, kernels.L2, kernels.L2SQ, kernels.CMOD]


def _naive_distances(Q, E, mode):
    out = np.empty((len(Q), len(E)))
    for i, q in enumerate(Q):
        for j, e in enumerate(E):
            v = q - e
            if mode == kernels.L1:
                out[i, j] = -np.abs(v).sum()
            elif mode == kernels.L2:
                out[i, j] = -np.sqrt((v * v).sum())
            elif mode == kernels.L2SQ:
                out[i, j] = -(v * v).sum()
            else:
                half = len(v) // 2
                out[i, j] = -np.abs(v[:half] + 1j * v[half:]).sum()
    return out


def test_compiled_backend_built():
    # the extension ships with the package; the fallback is only a safety net
    assert "compiled" in BACKENDS
    assert kernels.BACKEND == ("python" if os.environ.get("MULTIKG_PURE_PYTHON") else "compiled")


@pytest.mark.parametrize("backend", sorted(BACKENDS))
@pytest.mark.parametrize("mode", MODES)
def test_distance_scores_against_loops(backend, mode):
    rng = np.random.default_rng(mode)
    Q, E = rng.normal(size=(7, 6)), rng.normal(size=(11, 6))
    got = BACKENDS[backend].distance_scores(Q, E, mode)
    np.testing.assert_allclose(got, _naive_distances(Q, E, mode), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_transe_update_rejects_complex_modulus(backend):
    z = np.zeros((2, 2))
    tri = np.zeros((1, 3), dtype=np.int64)
    with pytest.raises(ValueError):
        BACKENDS[backend].transe_batch_update(z, z, z, z, tri, tri, 1, 1.0, 0.1, kernels.CMOD, kernels.SGD, 0.0)


@given(st.integers(0, 10_000), st.sampled_from(MODES[:3]), st.sampled_from([kernels.SGD, kernels.ADAGRAD]))
def test_transe_update_backends_agree(seed, mode, opt):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(seed)
    n_e, n_r, d, k = 9, 3, 4, 3
    ent, rel = rng.normal(size=(n_e, d)) * 0.5, rng.normal(size=(n_r, d)) * 0.5
    pos = rng.integers(0, [n_e, n_r, n_e], size=(6, 3))
    neg = np.repeat(pos, k, axis=0)
    neg[:, 2] = rng.integers(0, n_e, size=len(neg))
    out = {}
    for name, mod in BACKENDS.items():
        e, r = ent.copy(), rel.copy()
        ea, ra = np.full((n_e, d), 0.1), np.full((n_r, d), 0.1)
        loss = mod.transe_batch_update(e, r, ea, ra, pos, neg, k, 1.0, 0.05, mode, opt, 1e-10)
        out[name] = (loss, e, r, ea, ra)
    a, b = out["python"], out["compiled"]
    assert abs(a[0] - b[0]) < 1e-10
    for x, y in zip(a[1:], b[1:]):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


@pytest.mark.parametrize("optimizer", ["sgd", "adagrad"])
@pytest.mark.parametrize("norm", ["L1", "L2"])
def test_kernel_epoch_matches_generic_path(optimizer, norm):
    """The compiled TransE step and the model/loss/optimizer composition are
    two routes to the same update."""
    rng = np.random.default_rng(0)
    tri = np.unique(rng.integers(0, [30, 4, 30], size=(200, 3)), axis=0)
    kf = KnownFilter(tri, 30, 4)
    runs = []
    for use_kernel in (True, False):
        P = init_params(ModelKind("TransE", norm), 8, 30, 4, seed=1)
        t = Trainer(P, tri, NegSampleConfig("uniform", k=2), LossConfig("marginal_ranking", margin=1.0),
                    Optimizer(optimizer, lr=0.05), kf, TrainerConfig(batch_size=32, seed=3, use_kernel=use_kernel))
        assert t.kernel_eligible == use_kernel
        losses = [t.train_epoch().loss for _ in range(3)]
        runs.append((losses, P))
    np.testing.assert_allclose(runs[0][0], runs[1][0], rtol=1e-9)
    for name in ("ent", "rel"):
        np.testing.assert_allclose(runs[0][1].tables[name], runs[1][1].tables[name], atol=1e-10)


def test_pure_python_switch():
    code = "from multikg import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, MULTIKG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_worker_rng_used_by_kernel_is_stable():
    assert worker_rng(1, 2, 3).integers(1 << 30) == worker_rng(1, 2, 3).integers(1 << 30)
