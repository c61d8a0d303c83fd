import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from siamtir.autodiff import Tensor, gradients, verification_mode
from siamtir.exceptions import DegenerateMapError, ShapeError, SupportError
from siamtir.fusion import fuse_kl_optimal, init_fusion, kl_divergence, normalize_to_distribution, ren_forward
from siamtir.params import ParameterSet
from siamtir.verification import kl_simplex_minimiser

seeds = st.integers(0, 2**32 - 1)


def _simplex(r, shape):
    m = r.uniform(0.01, 1.0, shape)
    return m / m.sum()


def _fusion(alpha, beta, bias):
    return {"fusion.alpha": Tensor(alpha), "fusion.beta": Tensor(beta), "fusion.bias": Tensor(bias)}


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_to_distribution([1.0, 3.0]), [0.0, 1.0])
    q = np.array([0.0, 0.25, 0.75])
    np.testing.assert_array_equal(normalize_to_distribution(q), q)
    with pytest.raises(DegenerateMapError):
        normalize_to_distribution(np.full((3, 3), 2.0))


@given(seed=seeds)
def test_normalized_map_is_a_distribution(seed):
    p = normalize_to_distribution(np.random.default_rng(seed).standard_normal((5, 4)))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-6


def test_kl_examples():
    s = np.array([0.5, 0.5])
    assert kl_divergence(s, s) == 0.0
    expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    assert kl_divergence(s, [0.25, 0.75]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1438, abs=1e-4)
    assert kl_divergence([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    with pytest.raises(SupportError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ShapeError):
        kl_divergence([1.0], [0.5, 0.5])


def test_kl_non_negative_on_random_pairs(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 10))
        assert kl_divergence(_simplex(rng, n), _simplex(rng, n)) >= 0


def test_fuse_examples():
    np.testing.assert_allclose(fuse_kl_optimal([[0.2, 0.8], [0.6, 0.4]]), [0.4, 0.6])
    s = np.array([0.1, 0.9])
    np.testing.assert_array_equal(fuse_kl_optimal([s]), s)
    with pytest.raises(ShapeError):
        fuse_kl_optimal([[0.5, 0.5], [1.0]])


@given(seed=seeds)
def test_fused_self_pair_has_zero_divergence(seed):
    s = _simplex(np.random.default_rng(seed), (4, 4))
    assert kl_divergence(s, fuse_kl_optimal([s, s])) == pytest.approx(0.0, abs=1e-15)


@given(seed=seeds, k=st.integers(1, 4))
def test_mean_minimises_summed_divergence(seed, k):
    r = np.random.default_rng(seed)
    maps = [_simplex(r, (3, 3)) for _ in range(k)]
    numeric = kl_simplex_minimiser(maps)
    np.testing.assert_allclose(numeric, fuse_kl_optimal(maps), atol=1e-6)


def test_ren_examples():
    m = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]))
    np.testing.assert_allclose(ren_forward(m, m, _fusion(1.0, 1.0, 0.0)).data, m.data)
    out = ren_forward(Tensor([0.0, 1.0]), Tensor([5.0, -5.0]), _fusion(2.0, 0.0, 1.0))
    np.testing.assert_allclose(out.data, [1.0, 2.0])
    with pytest.raises(ShapeError):
        ren_forward(Tensor(np.ones(3)), Tensor(np.ones(2)), _fusion(1.0, 1.0, 0.0))


def test_semantic_only_fusion():
    out = ren_forward(None, Tensor([2.0, 4.0]), _fusion(7.0, 3.0, 1.0))
    np.testing.assert_allclose(out.data, [4.0, 7.0])


def test_init_is_unweighted_mean():
    assert {k: float(v) for k, v in init_fusion().items()} == {"fusion.alpha": 1.0, "fusion.beta": 1.0,
                                                               "fusion.bias": 0.0}


@given(seed=seeds, c=st.floats(0.01, 100), d=st.floats(-100, 100))
def test_ren_argmax_invariant_under_affine_reparametrisation(seed, c, d):
    r = np.random.default_rng(seed)
    fs, fm = Tensor(r.standard_normal((17, 17))), Tensor(r.standard_normal((17, 17)))
    a, b, bias = r.uniform(0.1, 2), r.uniform(0.1, 2), r.standard_normal()
    base = ren_forward(fs, fm, _fusion(a, b, bias)).data
    moved = ren_forward(fs, fm, _fusion(c * a, c * b, c * bias + d)).data
    assert np.argmax(base) == np.argmax(moved)


def test_fusion_partial_derivatives(rng):
    with verification_mode():
        fs, fm = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
        g = rng.standard_normal((5, 5))
        p = ParameterSet({"fusion.alpha": 0.7, "fusion.beta": 1.4, "fusion.bias": 0.2})
        loss = (ren_forward(Tensor(fs), Tensor(fm), p) * Tensor(g)).sum()
        da, db, dbias = gradients(loss, p.tensors())
        assert da == pytest.approx(np.sum(0.5 * fs * g), rel=1e-12)
        assert db == pytest.approx(np.sum(0.5 * fm * g), rel=1e-12)
        assert dbias == pytest.approx(np.sum(g), rel=1e-12)
        eps = 1e-6
        for name, analytic in (("fusion.alpha", da), ("fusion.beta", db)):
            t = p[name]
            t.data = t.data + eps
            up = np.sum(ren_forward(Tensor(fs), Tensor(fm), p).data * g)
            t.data = t.data - 2 * eps
            down = np.sum(ren_forward(Tensor(fs), Tensor(fm), p).data * g)
            t.data = t.data + eps
            assert (up - down) / (2 * eps) == pytest.approx(float(analytic), rel=1e-6)
