"""Acceptance suite: one test per criterion, each printing a PASS line.

Run as `pytest tests/test_acceptance.py -v -s`. The synthetic end-to-end
experiment trains the full model once (session fixture) and feeds the
accuracy/AUC, gate-count, and gate-activation criteria.
"""

import dataclasses
import time

import numpy as np
import pytest

from curvefeat.curvelet import adjoint_check, build_geometry, fdct_forward, fdct_inverse
from curvefeat.gating import conv_chain_sizes
from curvefeat.masks import band_scale_ranges, build_bands
from curvefeat.metrics import ScoredItem, accuracy, auc, gates_report
from curvefeat.nnops import conv2d
from curvefeat.pipeline import enhance_image, inflate_first_conv, neutral_params
from curvefeat.regularizer import RegConfig, lambda_l1_at, normalized_cls_loss, reg_loss
from curvefeat.training import (
    OptimizerConfig,
    RegConfig,
    build_model,
    history_to_csv,
    make_synthetic,
    model_backward,
    model_forward,
    predict,
    train,
)

from helpers import check_tensor_grad


def _report(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {name}: PASS{suffix}")


# --- experiment configuration (fixed; see README) --------------------------
EXPERIMENT_SEED = 7
EXPERIMENT_SIZE = 64
EXPERIMENT_SAMPLES = 400
EXPERIMENT_EPOCHS = 30
EXPERIMENT_LR = 0.004
EXPERIMENT_HIDDEN = 32
EXPERIMENT_TARGET = 39.0  # half the 3 * 26 gates of the 4-scale geometry


@pytest.fixture(scope="session")
def experiment():
    """Train the synthetic end-to-end experiment once for several criteria."""
    t0 = time.perf_counter()
    dataset = make_synthetic(EXPERIMENT_SAMPLES, EXPERIMENT_SIZE, seed=EXPERIMENT_SEED)
    train_ds = dataclasses.replace(dataset, samples=dataset.samples[:320])
    test_samples = dataset.samples[320:]
    cfg = RegConfig(total_active_target=EXPERIMENT_TARGET)
    state, history = train(
        train_ds,
        cfg,
        optimizer=OptimizerConfig(learning_rate=EXPERIMENT_LR),
        epochs=EXPERIMENT_EPOCHS,
        seed=EXPERIMENT_SEED,
        hidden=EXPERIMENT_HIDDEN,
    )
    train_seconds = time.perf_counter() - t0
    test_images = np.stack([s.image for s in test_samples])
    test_labels = np.array([s.label for s in test_samples])
    test_bands = np.array([s.doctored_band for s in test_samples])
    probs, scores, gates = predict(state.model, test_images)
    return {
        "dataset": dataset,
        "cfg": cfg,
        "state": state,
        "history": history,
        "seconds": train_seconds,
        "test_images": test_images,
        "test_labels": test_labels,
        "test_bands": test_bands,
        "probs": probs,
        "scores": scores,
        "gates": gates,
    }


class TestReconstruction:
    def test_fifty_seeded_round_trips(self):
        geom = build_geometry(299, 299, 5, 8)
        worst = 0.0
        slowest = 0.0
        for seed in range(50):
            x = np.random.default_rng(seed).standard_normal((299, 299))
            t0 = time.perf_counter()
            coeffs = fdct_forward(x, geom)
            t1 = time.perf_counter()
            xr = fdct_inverse(coeffs)
            t2 = time.perf_counter()
            worst = max(worst, np.linalg.norm(xr - x) / np.linalg.norm(x))
            slowest = max(slowest, t1 - t0, t2 - t1)
        assert worst <= 1e-8
        assert slowest <= 1.0
        _report("reconstruction", f"worst rel err {worst:.2e}, slowest {slowest * 1e3:.0f} ms")


class TestParsevalAdjoint:
    def test_twenty_seeded_cases(self):
        geom = build_geometry(299, 299, 5, 8)
        worst_parseval = 0.0
        worst_adjoint = 0.0
        for seed in range(20):
            x = np.random.default_rng(seed + 100).standard_normal((299, 299))
            coeffs = fdct_forward(x, geom)
            worst_parseval = max(
                worst_parseval, abs(coeffs.energy() / float(np.sum(x * x)) - 1.0)
            )
            worst_adjoint = max(worst_adjoint, adjoint_check(geom, seed))
        assert worst_parseval <= 1e-8
        assert worst_adjoint <= 1e-8
        partition = geom.partition_deviation()
        assert partition <= 1e-10
        _report(
            "parseval+adjoint",
            f"parseval {worst_parseval:.2e}, adjoint {worst_adjoint:.2e}, "
            f"partition {partition:.2e}",
        )


class TestGeometry:
    def test_counts_and_bands(self):
        geom = build_geometry(299, 299, 5, 8)
        assert geom.per_scale_angles == (1, 8, 16, 16, 1)
        assert geom.num_wedges == 42
        masks = build_bands(geom)
        ones = [len(b.wedge_indices) for b in masks.bands]
        assert ones == [9, 16, 17, 42]
        _report("geometry", "per-scale (1,8,16,16,1); band ones (9,16,17,42)")


class TestSqueezeChain:
    def test_published_trace(self):
        sizes = [s[0] for s in conv_chain_sizes(299, 299)]
        assert sizes == [149, 74, 37, 19, 9, 4]
        _report("squeeze-chain", "299 -> " + " -> ".join(map(str, sizes)))


class TestNeutralIdentity:
    def test_identity_and_additivity(self):
        geom = build_geometry(64, 64, 4, 8)
        params = neutral_params(geom, seed=0)
        worst_identity = 0.0
        worst_additivity = 0.0
        for seed in range(10):
            rgb = np.random.default_rng(seed + 200).random((3, 64, 64))
            stack = enhance_image(rgb, params)
            for c in range(3):
                err = np.linalg.norm(stack[4 * c + 3] - rgb[c]) / np.linalg.norm(rgb[c])
                worst_identity = max(worst_identity, err)
                s = stack[4 * c] + stack[4 * c + 1] + stack[4 * c + 2]
                err = np.linalg.norm(s - stack[4 * c + 3]) / np.linalg.norm(
                    stack[4 * c + 3]
                )
                worst_additivity = max(worst_additivity, err)
        assert worst_identity <= 1e-6
        assert worst_additivity <= 1e-6
        _report(
            "neutral-identity",
            f"identity {worst_identity:.2e}, additivity {worst_additivity:.2e}",
        )


class TestGradientSuite:
    def test_every_learnable_tensor(self):
        t0 = time.perf_counter()
        geom = build_geometry(16, 16, 3, 8)
        model = build_model(geom, hidden=8, seed=3)
        rng = np.random.default_rng(7)
        for arr in model.named_parameters().values():
            arr += rng.normal(0, 0.05, arr.shape)
        x = rng.random((3, 3, 16, 16))
        y = np.array([0.0, 1.0, 1.0])
        cfg = RegConfig(total_active_target=15.0)
        res = model_forward(model, x, y, cfg, epoch=0, gate_mode="soft")
        grads = model_backward(res.cache)

        def loss():
            return model_forward(
                model, x, y, cfg, epoch=0, gate_mode="soft", need_cache=False
            ).loss

        check = np.random.default_rng(0)
        worst = 0.0
        count = 0
        for name, arr in model.named_parameters().items():
            worst = max(worst, check_tensor_grad(loss, arr, grads[name], check))
            count += 1
        elapsed = time.perf_counter() - t0
        assert worst <= 1e-4
        assert elapsed <= 120.0
        _report(
            "gradient-suite",
            f"{count} tensors, worst rel err {worst:.2e}, {elapsed:.0f} s",
        )


class TestRegularizerArithmetic:
    def test_worked_examples(self):
        cfg = RegConfig()
        assert normalized_cls_loss(0.35, cfg) == pytest.approx(0.125, abs=1e-15)
        assert normalized_cls_loss(0.1, cfg) == 0.0
        assert normalized_cls_loss(0.9, cfg) == 0.25
        cfg14 = RegConfig(total_active_target=42.0)
        assert reg_loss(np.array([14.0, 14.0, 14.0]), 0.1, 0, cfg14) == 0.0
        assert reg_loss(np.array([42.0, 42.0, 42.0]), 0.1, 0, cfg) == pytest.approx(
            5.25e-3, rel=1e-12
        )
        assert lambda_l1_at(4, cfg) == pytest.approx(2.5e-4)
        assert lambda_l1_at(5, cfg) == pytest.approx(3.75e-4)
        assert lambda_l1_at(10, cfg) == pytest.approx(5.0e-4)
        _report("regularizer-arithmetic", "0.125 / 0 / 0.25 / 5.25e-3 / steps at 5,10")


class TestMetrics:
    def test_fixtures(self):
        scores = [0.9] * 9 + [0.1] * 2 + [0.1] * 8 + [0.9]
        labels = [1] * 11 + [0] * 9
        items = [
            ScoredItem(str(i), [float(s)], int(l))
            for i, (s, l) in enumerate(zip(scores, labels))
        ]
        assert accuracy(items) == pytest.approx(0.85)

        def mk(ss, ls):
            return [
                ScoredItem(str(i), [float(s)], int(l))
                for i, (s, l) in enumerate(zip(ss, ls))
            ]

        assert auc(mk([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])) == 1.0
        assert auc(mk([0.5] * 4, [1, 1, 0, 0])) == pytest.approx(0.5)
        assert auc(mk([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0])) == pytest.approx(0.75)
        # brute-force pairwise oracle agreement on a random fixture
        rng = np.random.default_rng(5)
        ss = rng.integers(0, 5, size=30) / 4.0
        ls = rng.integers(0, 2, size=30)
        ls[0], ls[1] = 0, 1
        pos, neg = ss[ls == 1], ss[ls == 0]
        brute = (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (
            len(pos) * len(neg)
        )
        assert auc(mk(ss, ls)) == pytest.approx(brute, abs=1e-12)
        _report("metrics", "acc 0.85; auc 1.0 / 0.5 / 0.75; pairwise oracle agrees")


class TestWeightInflation:
    def test_four_times_replication(self):
        rng = np.random.default_rng(9)
        w = rng.normal(size=(1, 3, 5, 5))
        x = rng.normal(size=(1, 3, 5, 5))
        big = conv2d(np.repeat(x, 4, axis=1), inflate_first_conv(w), np.zeros(1), 1, 0)
        base = conv2d(x, w, np.zeros(1), 1, 0)
        rel = np.max(np.abs(big - 4.0 * base)) / max(np.max(np.abs(4.0 * base)), 1e-30)
        assert rel <= 1e-12
        _report("weight-inflation", f"rel err {rel:.2e}")


class TestSyntheticEndToEnd:
    def test_accuracy_and_auc(self, experiment):
        assert experiment["seconds"] <= 600.0
        labels = experiment["test_labels"]
        probs = experiment["probs"]
        items = [
            ScoredItem(str(i), [float(p)], int(l))
            for i, (p, l) in enumerate(zip(probs, labels))
        ]
        acc = accuracy(items)
        area = auc(items)
        assert acc >= 0.95
        assert area >= 0.99
        _report(
            "synthetic-e2e",
            f"test acc {acc:.4f}, auc {area:.4f}, {experiment['seconds']:.0f} s, "
            f"{EXPERIMENT_EPOCHS} epochs",
        )

    def test_gate_counts_near_target(self, experiment):
        target = experiment["cfg"].target_per_channel
        last = experiment["history"][-1]
        counts = [last["gate_count_r"], last["gate_count_g"], last["gate_count_b"]]
        for c in counts:
            assert abs(c - target) <= 4.0
        _report(
            "gate-counts",
            f"final {['%.1f' % c for c in counts]} vs target {target}",
        )

    def test_doctored_band_activation(self, experiment):
        dataset = experiment["dataset"]
        geom = dataset.geometry
        ranges = band_scale_ranges(geom.num_scales)[:3]
        band_idx = [
            np.array([i for i, w in enumerate(geom.wedges) if lo <= w.scale <= hi])
            for lo, hi in ranges
        ]
        report = gates_report(
            experiment["state"].model,
            experiment["test_images"],
            experiment["test_bands"],
        )
        details = []
        for band in (1, 2, 3):
            inside, outside = report.band_activation(band_idx[band - 1], band)
            assert inside > outside, f"band {band}: {inside:.3f} <= {outside:.3f}"
            details.append(f"b{band} {inside:.2f}>{outside:.2f}")
        _report("doctored-band-activation", ", ".join(details))


class TestDeterminism:
    def test_identical_history_csv(self):
        dataset = make_synthetic(16, 32, seed=21)
        cfg = RegConfig(total_active_target=15.0)
        _, h1 = train(dataset, cfg, epochs=3, seed=21)
        _, h2 = train(dataset, cfg, epochs=3, seed=21)
        csv1, csv2 = history_to_csv(h1), history_to_csv(h2)
        assert csv1.encode() == csv2.encode()
        _report("determinism", f"{len(csv1)} byte history identical across runs")
