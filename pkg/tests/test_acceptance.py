"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the run summary prints one
PASS/FAIL/SKIP line per criterion along with measured values.
"""

import time

import numpy as np
import pytest

from bitnn import toy
from bitnn.bitcore import BitPlane, TernaryLayer, layer_forward, pack, pack_bipolar
from bitnn.bnn import BnnState, forward_binary, output_error, propagate_noisy, score_temperature
from bitnn.cli import main, run_bench
from bitnn.realnet import RealNetwork
from bitnn.ternarize import TernarizeSpec, compute_beta, ternarize_tensor
from oracles import random_bipolar, random_ternary, scalar_forward, scalar_layer, scalar_noisy_gradients, scalar_softmax
from test_realnet import finite_difference_check


def eval_error(capsys, model, data_dir) -> float:
    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--data-dir", str(data_dir)]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    return float(first.split()[0].split("=")[1])


@pytest.mark.criterion(1, "oracle equivalence")
def test_oracle_equivalence(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    cases = 0
    for sparsity in (0.0, 0.3, 0.9):
        for _ in range(334 if sparsity == 0.0 else 333):
            cols = int(rng.integers(1, 301))
            rows = int(rng.integers(1, 9))
            weights = random_ternary(rng, (rows, cols), sparsity)
            bias = random_ternary(rng, rows, sparsity)
            x = random_bipolar(rng, cols)
            pre, out = layer_forward(TernaryLayer.from_dense(weights, bias), pack(x))
            want_pre, want_out = scalar_layer(weights, bias, x)
            assert pre.tolist() == want_pre
            assert out.unpack().tolist() == want_out
            cases += 1
    elapsed = time.perf_counter() - start
    record_property("cases", cases)
    record_property("seconds", f"{elapsed:.2f}")
    assert cases == 1000
    assert elapsed < 10.0


@pytest.mark.criterion(2, "phase-1 gradient check")
def test_phase1_gradient_check(record_property):
    net = RealNetwork.initialize([6, 5, 4, 3], np.random.default_rng(5), scale=1.0)
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, (7, 6))
    labels = rng.integers(0, 3, 7)
    worst = finite_difference_check(net, x, labels, per_tensor=20, eps=1e-5)
    record_property("max_rel_err", f"{worst:.2e}")
    assert worst < 1e-6


@pytest.mark.criterion(3, "phase-2 equation fidelity")
def test_phase2_equation_fidelity(record_property):
    checked = 0
    for seed in range(25):
        rng = np.random.default_rng(300 + seed)
        net = RealNetwork.initialize([5, 4, 3], rng, scale=1.0)
        state = BnnState.from_real(net, TernarizeSpec(float(rng.choice([0.0, 0.25, 0.5]))))
        x_words = pack_bipolar(random_bipolar(rng, (int(rng.integers(1, 12)), 5)))
        labels = rng.integers(0, 3, x_words.shape[0])
        cache = forward_binary(state.layers, x_words)
        delta = output_error(state.layers, cache.scores, labels)

        # softmax head against a scalar softmax of the scaled integer scores
        t = score_temperature(state.layers)
        for row, scores, label in zip(delta, cache.scores, labels):
            want = [p - (k == label) for k, p in enumerate(scalar_softmax([s / t for s in scores]))]
            np.testing.assert_allclose(row, want, rtol=0, atol=1e-15)

        # delta propagation and gradients: bit-for-bit
        dense = [(l.dense_weights(), l.dense_bias()) for l in state.layers]
        got = propagate_noisy(state.layers, cache, delta)
        want = scalar_noisy_gradients(dense, cache.inputs[0], labels, t, delta)
        for (gw, gb), (ww, wb) in zip(got, want):
            assert gw.tobytes() == ww.tobytes()
            assert gb.tobytes() == wb.tobytes()
            checked += gw.size + gb.size
    record_property("exact_gradient_entries", checked)


@pytest.mark.criterion(4, "hand-built networks")
def test_hand_built_networks():
    xor = toy.xor_network()
    for point, target in zip(toy.POINTS, toy.xor_targets()):
        trace = scalar_forward([(l.dense_weights(), l.dense_bias()) for l in xor], point)
        z = BitPlane(2, pack_bipolar(point))
        for layer in xor:
            _, z = layer_forward(layer, z)
        assert z.unpack().tolist() == [target]
        assert (1 if trace[-1][1][0] >= 0 else -1) == target

    copy = toy.copy_x2_network()
    for point in toy.POINTS:
        _, out = layer_forward(copy[0], pack(point))
        assert out.unpack().tolist() == [point[1]]


@pytest.mark.criterion(5, "ternarization sparsity")
def test_ternarization_sparsity(record_property):
    rng = np.random.default_rng(55)
    tensors = {
        "normal": rng.normal(size=10_000),
        "uniform": rng.uniform(-1, 1, 10_000),
        "tied": np.round(rng.normal(size=10_000), 1),
    }
    worst = 0.0
    for name, values in tensors.items():
        zero_sets = []
        for lam in (0.1, 0.5, 0.9):
            beta = compute_beta(values, lam)
            tern = ternarize_tensor(values, beta)
            achieved = float(np.mean(tern == 0))
            ties = int(np.sum(np.abs(values) == beta))
            assert abs(achieved - lam) <= (ties + 1) / values.size, name
            if name != "tied":
                worst = max(worst, abs(achieved - lam))
            zero_sets.append(tern == 0)
        for lo, hi in zip(zero_sets, zero_sets[1:]):
            assert np.all(~lo | hi)
    record_property("max_dev_untied", f"{worst:.1e}")


@pytest.mark.slow
@pytest.mark.criterion(6, "desk-scale MNIST")
def test_desk_scale_mnist(mnist_dir, tmp_path, capsys, record_property):
    real = tmp_path / "real.bnnf"
    tern = tmp_path / "bnn.bnnf"
    start = time.perf_counter()
    assert main(["train-real", "--data-dir", str(mnist_dir), "--hidden", "256,256,256", "--out", str(real)]) == 0
    real_err = eval_error(capsys, real, mnist_dir)
    assert main(["train-bnn", "--data-dir", str(mnist_dir), "--init", str(real), "--out", str(tern)]) == 0
    bnn_err = eval_error(capsys, tern, mnist_dir)
    record_property("real_err", f"{real_err:.4f}")
    record_property("bnn_err", f"{bnn_err:.4f}")
    record_property("minutes", f"{(time.perf_counter() - start) / 60:.1f}")
    assert bnn_err <= 0.05


def _pipeline(data_dir, out_dir, limits):
    real, tern = out_dir / "real.bnnf", out_dir / "bnn.bnnf"
    common = ["--data-dir", str(data_dir), *limits, "--seed", "7"]
    assert main(["train-real", *common, "--hidden", "48,32", "--epochs", "3", "--out", str(real)]) == 0
    assert main(["train-bnn", *common, "--init", str(real), "--sparsity", "0.3", "--epochs", "2", "--out", str(tern)]) == 0
    return real.read_bytes(), tern.read_bytes()


@pytest.mark.criterion(7, "determinism")
def test_pipeline_determinism(tmp_path, record_property):
    from conftest import MNIST_DIR, _has_mnist

    if _has_mnist():
        data_dir, limits = MNIST_DIR, ["--train-limit", "3000", "--test-limit", "500"]
    else:
        data_dir, limits = toy.fixture_dir() / "xor", []
    runs = []
    for i in range(2):
        (tmp_path / str(i)).mkdir()
        runs.append(_pipeline(data_dir, tmp_path / str(i), limits))
    record_property("data", "mnist-subset" if limits else "xor")
    record_property("bytes", sum(len(b) for b in runs[0]))
    assert runs[0] == runs[1]


@pytest.mark.criterion(8, "benchmark sanity")
def test_benchmark(record_property):
    report = run_bench(1024, 1024, 2000)
    record_property("speedup", f"{report['speedup']:.2f}")
    record_property("packed_per_s", f"{report['packed_per_s']:.0f}")
    record_property("naive_per_s", f"{report['naive_per_s']:.0f}")
    assert report["packed_per_s"] > report["naive_per_s"]
