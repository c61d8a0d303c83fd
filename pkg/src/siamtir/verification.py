"""Numerical verification suite: finite-difference gradient checks and oracles.

Every check runs in 64-bit mode and compares against an independent
computation (central differences, dense linear algebra, brute-force loops
or a generic optimiser).  ``run_suite`` backs the ``gradcheck`` subcommand.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .autodiff import (
    Tensor,
    conv2d,
    conv_transpose2d,
    cross_correlate,
    cross_correlate_fft,
    fft2,
    global_avg_pool,
    global_max_pool,
    grad_check,
    ifft2,
    max_pool2d,
    pad2d,
    relu,
    roll2d,
    scale_broadcast,
    sigmoid,
    softplus,
    verification_mode,
)
from .fusion import fuse_kl_optimal
from .similarity import CFBlockParams, cf_template


def _in_64_bit(fn):
    """Run a check under verification precision whatever the caller's mode."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with verification_mode():
            return fn(*args, **kwargs)
    return wrapper


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.error:.3e} (<= {self.threshold:.0e})"


# -- oracles ------------------------------------------------------------------

def brute_force_correlation(template: np.ndarray, search: np.ndarray) -> np.ndarray:
    """Valid cross-correlation by explicit loops: ``out[i, j] = sum t[c, p, q] s[c, i + p, j + q]``."""
    c, h, w = template.shape
    _, hh, ww = search.shape
    out = np.zeros((hh - h + 1, ww - w + 1))
    for i in range(hh - h + 1):
        for j in range(ww - w + 1):
            total = 0.0
            for ch in range(c):
                for p in range(h):
                    for q in range(w):
                        total += template[ch, p, q] * search[ch, i + p, j + q]
            out[i, j] = total
    return out


def dense_cf_solution(feature: np.ndarray, cf: CFBlockParams) -> np.ndarray:
    """Ridge regression over circular shifts solved with a dense normal-equation system."""
    c, h, w = feature.shape
    n = h * w
    x = feature * cf.window
    rows = []
    for u in range(h):
        for v in range(w):
            # row (u, v): coefficient of w_c[t] is x_c[t + (u, v)] with wrap-around
            shifted = np.roll(x, shift=(-u, -v), axis=(1, 2))
            rows.append(shifted.reshape(-1))
    a = np.array(rows)  # n x (c * n)
    lhs = a.T @ a + cf.lam * np.eye(c * n)
    rhs = a.T @ cf.label.reshape(-1)
    return np.linalg.solve(lhs, rhs).reshape(c, h, w)


def kl_simplex_minimiser(maps: list[np.ndarray]) -> np.ndarray:
    """Numerically minimise ``sum_k KL(S_k || Q)`` over the simplex (softmax-parametrised L-BFGS)."""
    s = np.stack([np.asarray(m, dtype=np.float64).reshape(-1) for m in maps])
    k = len(s)
    total = s.sum(axis=0)

    def objective(theta):
        shift = theta - theta.max()
        log_q = shift - np.log(np.exp(shift).sum())
        value = -float(np.dot(total, log_q))
        grad = k * np.exp(log_q) - total
        return value, grad

    theta0 = np.zeros(s.shape[1])
    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                            options={"gtol": 1e-13, "ftol": 1e-16, "maxiter": 10000})
    theta = res.x - res.x.max()
    q = np.exp(theta)
    return (q / q.sum()).reshape(np.shape(maps[0]))


# -- individual checks --------------------------------------------------------

def _t(rng, *shape, scale=1.0, offset=0.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale + offset, requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    """Values with magnitude in [0.2, 1.2] so ReLU kinks stay out of the stencil."""
    mag = rng.uniform(0.2, 1.2, shape)
    return Tensor(mag * rng.choice([-1.0, 1.0], shape), requires_grad=True)


def _distinct(rng, *shape) -> Tensor:
    """A permutation of well-separated values so max/argmax never ties."""
    values = rng.permutation(np.prod(shape)).reshape(shape) * 0.1
    return Tensor(values.astype(np.float64), requires_grad=True)


@_in_64_bit
def op_gradient_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def check(name, op, inputs, threshold, eps=1e-4):
        # project the op output on a fixed random direction to get a scalar
        proj = Tensor(rng.standard_normal(op().shape))
        err = grad_check(lambda: (op() * proj).sum(), inputs, epsilon=eps)
        out.append(CheckResult(f"grad {name}", err, threshold))

    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    check("add/sub", lambda: a + b - a * 0.5, [a, b], 1e-7)
    check("mul", lambda: a * b, [a, b], 1e-7)
    d = _t(rng, 3, 4, scale=0.3, offset=2.0)
    check("div", lambda: a / d, [a, d], 1e-6)
    check("exp/log", lambda: a.exp() + d.log(), [a, d], 1e-6)
    check("sigmoid", lambda: sigmoid(sigmoid(a) * 2.0), [a], 1e-5)
    check("softplus", lambda: softplus(a), [a], 1e-6)
    r = _away_from_zero(rng, 3, 4)
    check("relu", lambda: relu(r), [r], 1e-7)
    check("getitem/transpose/reshape", lambda: a[1:, ::2].transpose().reshape(4), [a], 1e-7)
    check("sum/mean", lambda: a.sum(axis=0) + a.mean(axis=0, keepdims=True), [a], 1e-7)

    x, k, bias = _t(rng, 2, 2, 7, 6), _t(rng, 3, 2, 3, 2), _t(rng, 3)
    check("conv2d", lambda: conv2d(x, k, bias, stride=2, padding=(1, 1)), [x, k, bias], 1e-7)
    xt, kt, bt = _t(rng, 2, 3, 3, 4), _t(rng, 3, 2, 3, 2), _t(rng, 2)
    check("conv_transpose2d", lambda: conv_transpose2d(xt, kt, bt, stride=2), [xt, kt, bt], 1e-7)
    p = _distinct(rng, 1, 2, 4, 6)
    check("max_pool2d", lambda: max_pool2d(p), [p], 1e-7, eps=1e-3)
    f = _distinct(rng, 2, 3, 3, 3)
    check("global_avg_pool", lambda: global_avg_pool(f), [f], 1e-7)
    check("global_max_pool", lambda: global_max_pool(f), [f], 1e-7, eps=1e-3)
    feat, cw, sm = _t(rng, 3, 4, 5), _t(rng, 3), _t(rng, 1, 4, 5)
    check("scale_broadcast", lambda: scale_broadcast(feat, cw) + scale_broadcast(feat, sm), [feat, cw, sm], 1e-7)
    q = _t(rng, 2, 3, 4)
    check("pad2d/roll2d", lambda: roll2d(pad2d(q, (1, 0), (0, 2)), (1, -2)), [q], 1e-7)
    tmpl, srch = _t(rng, 2, 3, 3), _t(rng, 2, 6, 5)
    check("cross_correlate", lambda: cross_correlate(tmpl, srch), [tmpl, srch], 1e-7)
    check("cross_correlate_fft", lambda: cross_correlate_fft(tmpl, srch), [tmpl, srch], 1e-7)
    img = _t(rng, 4, 6)
    spec_w = Tensor(rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6)))
    check("fft2/ifft2", lambda: ifft2(fft2(img) * spec_w), [img], 1e-7)
    cf_feat = _t(rng, 2, 5, 6)
    cf = CFBlockParams.for_shape(5, 6, lam=0.1)
    check("cf_template", lambda: cf_template(cf_feat, cf), [cf_feat], 1e-3)
    return out


@_in_64_bit
def network_gradient_check(seed: int = 0, entries: int = 2, epsilon: float = 1e-6) -> CheckResult:
    """Loss through the full two-head network on a synthetic crop pair, every parameter tensor probed.

    ReLU and max-pool switch points are dense at this input size, so a wide
    stencil (1e-4) measures kink crossings rather than the gradient; 1e-6
    keeps the stencil inside one linear piece while 64-bit rounding stays
    far below the threshold.
    """
    from .model import NetworkConfig, forward, init_params
    from .rng import SplitMix64
    from .synthetic import easy_suite
    from .training import TrainConfig, generate_pair, logistic_loss

    network = NetworkConfig()
    params = init_params(network, seed).astype(np.float64)
    # move the fusion scalars off their symmetric start
    params["fusion.alpha"].data = np.array(0.8)
    params["fusion.beta"].data = np.array(1.3)
    params["fusion.bias"].data = np.array(0.1)
    pair = generate_pair(easy_suite(seed, 1, 20)[0], SplitMix64(seed), TrainConfig(), network.map_shape)
    z = Tensor(pair.exemplar[None].astype(np.float64))
    x = Tensor(pair.search[None].astype(np.float64))

    def loss():
        return logistic_loss(pair.label, forward(params, z, x, network))

    err = grad_check(loss, params.tensors(), epsilon=epsilon, max_entries=entries + 1,
                     rng=np.random.default_rng(seed + 1))
    return CheckResult("grad full network loss", err, 1e-3)


@_in_64_bit
def adjoint_check(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 1, 4, 4))
    k = rng.standard_normal((1, 1, 3, 3))
    y = rng.standard_normal((1, 1, 2, 2))
    lhs = float(np.sum(conv2d(Tensor(x), Tensor(k)).data * y))
    rhs = float(np.sum(x * conv_transpose2d(Tensor(y), Tensor(k)).data))
    return CheckResult("conv_transpose2d adjoint", abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12), 1e-5)


@_in_64_bit
def fourier_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((8, 8))
    back = ifft2(fft2(Tensor(t))).data
    roundtrip = float(np.max(np.abs(back - t)) / np.max(np.abs(t)))
    u = rng.standard_normal((4, 6))
    # spectrum by the direct double sum
    m, n = u.shape
    ii, jj = np.arange(m), np.arange(n)
    direct = np.zeros((m, n), dtype=complex)
    for k in range(m):
        for l in range(n):
            phase = np.exp(-2j * np.pi * (k * ii[:, None] / m + l * jj[None, :] / n))
            direct[k, l] = np.sum(u * phase)
    spectrum = fft2(Tensor(u)).data
    energy = float(np.sum(u ** 2))
    parseval = abs(energy - float(np.sum(np.abs(direct) ** 2)) / u.size) / energy
    dft = float(np.max(np.abs(spectrum - direct)) / np.max(np.abs(direct)))
    return [CheckResult("fft round trip", roundtrip, 1e-5),
            CheckResult("Parseval (direct DFT)", parseval, 1e-5),
            CheckResult("fft2 vs direct DFT", dft, 1e-5)]


@_in_64_bit
def correlation_oracle(max_size: int = 8, max_channels: int = 4, seed: int = 0,
                       stride: int = 1) -> CheckResult:
    """Direct and FFT correlation against explicit loops for every template/search size."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in range(1, max_channels + 1):
        for hh in range(1, max_size + 1):
            for ww in range(1, max_size + 1):
                for h in range(1, hh + 1, stride):
                    for w in range(1, ww + 1, stride):
                        tmpl = rng.standard_normal((c, h, w))
                        srch = rng.standard_normal((c, hh, ww))
                        ref = brute_force_correlation(tmpl, srch)
                        scale = max(np.max(np.abs(ref)), 1.0)
                        for fn in (cross_correlate, cross_correlate_fft):
                            got = fn(Tensor(tmpl), Tensor(srch)).data.reshape(ref.shape)
                            worst = max(worst, float(np.max(np.abs(got - ref))) / scale)
    return CheckResult("cross-correlation vs brute force", worst, 1e-10)


@_in_64_bit
def cf_oracle(max_elements: int = 64, seed: int = 0) -> CheckResult:
    """``cf_template`` against the dense ridge solve for every ``C * h * w <= max_elements``, h, w >= 3."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in range(1, max_elements // 9 + 1):
        for h in range(3, max_elements // (3 * c) + 1):
            for w in range(3, max_elements // (c * h) + 1):
                feature = rng.standard_normal((c, h, w))
                lam = float(rng.choice([0.01, 0.1, 1.0]))
                cf = CFBlockParams.for_shape(h, w, lam=lam)
                got = cf_template(Tensor(feature), cf).data
                ref = dense_cf_solution(feature, cf)
                worst = max(worst, float(np.max(np.abs(got - ref))))
    return CheckResult("CF template vs dense ridge solve", worst, 1e-8)


@_in_64_bit
def kl_oracle(n_triples: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_triples):
        h, w = rng.integers(2, 7, size=2)
        maps = []
        for _ in range(3):
            m = rng.uniform(0.05, 1.0, (h, w))
            maps.append(m / m.sum())
        numeric = kl_simplex_minimiser(maps)
        worst = max(worst, float(np.max(np.abs(numeric - fuse_kl_optimal(maps)))))
    return CheckResult("KL simplex minimiser vs elementwise mean", worst, 1e-6)


def run_suite(seed: int = 0, full_network: bool = True,
              report: Callable[[str], None] | None = None) -> list[CheckResult]:
    """All gradient checks and oracles in 64-bit mode."""
    results = []

    def add(items):
        for item in items if isinstance(items, list) else [items]:
            results.append(item)
            if report is not None:
                report(item.line())

    with verification_mode():
        add(op_gradient_checks(seed))
        add(adjoint_check(seed))
        add(fourier_checks(seed))
        add(correlation_oracle(seed=seed))
        add(cf_oracle(seed=seed))
        add(kl_oracle(seed=seed))
        if full_network:
            add(network_gradient_check(seed))
    return results
