"""Desk-scale end-to-end training of the enhancement pipeline.

A small convolutional head stands in for a pretrained backbone: the
12-channel enhanced stack feeds two strided conv+ReLU layers, global
average pooling, and a single logit. Gradients for every learnable tensor
(squeeze convolutions, excite MLP, band masks, classifier) are computed by
hand with the exact chain rule; the gate binarization crosses the backward
pass as a straight-through identity.

Training minimizes binary cross-entropy plus the gate regularizer, with an
adaptive-moment optimizer (lr 0.002, cosine decay, weight decay 1e-4,
batch size 8 by default). Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvelet import CurveletGeometry, build_geometry
from .errors import MissingForwardCache, ShapeMismatch
from .gating import binary_threshold
from .nnops import conv2d, conv2d_vjp, kaiming_uniform, sigmoid
from .pipeline import (
    NUM_BANDS,
    NUM_CHANNELS,
    ChannelCache,
    EnhanceParams,
    _enhance_channel_forward,
    _enhance_channel_vjp,
    neutral_params,
)
from .regularizer import (
    RegConfig,
    lambda_l1_at,
    normalized_cls_loss,
    normalized_cls_loss_grad,
)


@dataclass
class ToyClassifier:
    """conv 12->8 /2, ReLU, conv 8->8 /2, ReLU, GAP, linear 8->1, sigmoid."""

    conv1_w: np.ndarray  # (8, 12, 3, 3)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (8, 8, 3, 3)
    conv2_b: np.ndarray
    fc_w: np.ndarray  # (8,)
    fc_b: np.ndarray  # scalar array

    @classmethod
    def create(cls, rng: np.random.Generator) -> "ToyClassifier":
        return cls(
            conv1_w=kaiming_uniform(rng, (8, 12, 3, 3), fan_in=12 * 9),
            conv1_b=np.zeros(8),
            conv2_w=kaiming_uniform(rng, (8, 8, 3, 3), fan_in=8 * 9),
            conv2_b=np.zeros(8),
            fc_w=kaiming_uniform(rng, (8,), fan_in=8),
            fc_b=np.zeros(()),
        )


@dataclass
class FafeModel:
    """Enhancement parameters plus the toy classification head."""

    enhance: EnhanceParams
    classifier: ToyClassifier
    hidden: int

    @property
    def geometry(self) -> CurveletGeometry:
        return self.enhance.geometry

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Live views of every learnable tensor, keyed by dotted names."""
        out: dict[str, np.ndarray] = {}
        for gi, gp in enumerate(self.enhance.gates):
            pre = f"gate{gi}."
            for layer in range(len(gp.stack.weights)):
                out[pre + f"conv{layer}.weight"] = gp.stack.weights[layer]
                out[pre + f"conv{layer}.bias"] = gp.stack.biases[layer]
            out[pre + "mlp.w1"] = gp.mlp.w1
            out[pre + "mlp.b1"] = gp.mlp.b1
            out[pre + "mlp.w2"] = gp.mlp.w2
            out[pre + "mlp.b2"] = gp.mlp.b2
        for band in range(NUM_BANDS):
            for i, arr in enumerate(self.enhance.masks.params[band]):
                out[f"mask.band{band + 1}.wedge{i:03d}"] = arr
        clf = self.classifier
        out["clf.conv1.weight"] = clf.conv1_w
        out["clf.conv1.bias"] = clf.conv1_b
        out["clf.conv2.weight"] = clf.conv2_w
        out["clf.conv2.bias"] = clf.conv2_b
        out["clf.fc.weight"] = clf.fc_w
        out["clf.fc.bias"] = clf.fc_b
        return out


def build_model(
    geometry: CurveletGeometry,
    hidden: int = 16,
    seed: int = 0,
    per_channel_gates: bool = False,
) -> FafeModel:
    enhance = neutral_params(
        geometry, hidden=hidden, seed=seed, per_channel_gates=per_channel_gates
    )
    rng = np.random.default_rng(seed + 1)
    return FafeModel(enhance=enhance, classifier=ToyClassifier.create(rng), hidden=hidden)


def calibrate_classifier(model: FafeModel, images: np.ndarray) -> None:
    """Data-dependent (LSUV-style) re-initialization of the classifier.

    GAP features of the raw head are orders of magnitude smaller than the
    weight travel an adaptive optimizer can cover in a short run, so the
    logit head would starve. This folds a per-channel standardization of the
    enhanced stack into conv1's weights/bias and rescales conv2 to roughly
    unit response. Architecture and forward code stay untouched; only the
    initial weight values change, deterministically for a given batch.
    """
    sample = np.asarray(images, dtype=float)
    maps = []
    for c in range(NUM_CHANNELS):
        out, _, _ = _enhance_channel_forward(sample[:, c], model.enhance, c)
        maps.append(out)
    enhanced = np.concatenate(maps, axis=-3)
    mu = enhanced.mean(axis=(0, 2, 3))
    sd = np.maximum(enhanced.std(axis=(0, 2, 3)), 1e-3)

    clf = model.classifier
    clf.conv1_w /= sd[None, :, None, None]
    clf.conv1_b[:] = -np.einsum("ocij,c->o", clf.conv1_w, mu) + 0.05
    z1 = conv2d(enhanced, clf.conv1_w, clf.conv1_b, stride=2, pad=1)
    a1 = np.maximum(z1, 0.0)
    scale1 = np.maximum(a1.std(axis=(0, 2, 3)), 1e-3)
    clf.conv2_w /= scale1[None, :, None, None]
    z2 = conv2d(a1, clf.conv2_w, clf.conv2_b, stride=2, pad=1)
    scale2 = np.maximum(z2.std(axis=(0, 2, 3)), 1e-3)
    clf.conv2_w /= scale2[:, None, None, None]
    clf.conv2_b[:] = 0.05
    clf.fc_w[:] = 0.0
    clf.fc_b[...] = 0.0


@dataclass
class ForwardCache:
    images: np.ndarray
    labels: np.ndarray | None
    channel_caches: list[ChannelCache]
    enhanced: np.ndarray
    clf_z1: np.ndarray
    clf_a1: np.ndarray
    clf_z2: np.ndarray
    clf_a2: np.ndarray
    clf_feat: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    scores: np.ndarray  # (B, 3, n)
    l_cls: float
    epoch: int
    cfg: RegConfig
    model: FafeModel


@dataclass
class ForwardResult:
    loss: float
    cls_loss: float
    reg_loss: float
    probs: np.ndarray
    scores: np.ndarray
    gates: np.ndarray
    cache: ForwardCache | None


def _classifier_forward(clf: ToyClassifier, x: np.ndarray):
    z1 = conv2d(x, clf.conv1_w, clf.conv1_b, stride=2, pad=1)
    a1 = np.maximum(z1, 0.0)
    z2 = conv2d(a1, clf.conv2_w, clf.conv2_b, stride=2, pad=1)
    a2 = np.maximum(z2, 0.0)
    feat = a2.mean(axis=(-2, -1))
    logits = feat @ clf.fc_w + clf.fc_b
    return z1, a1, z2, a2, feat, logits


def model_forward(
    model: FafeModel,
    images: np.ndarray,
    labels: np.ndarray | None,
    cfg: RegConfig,
    epoch: int = 0,
    gate_mode: str = "hard",
    need_cache: bool = True,
) -> ForwardResult:
    """Run the full pipeline on a batch of (B, 3, H, W) images.

    With ``labels`` given, computes BCE + regularization; without, only the
    prediction paths run.
    """
    x = np.asarray(images, dtype=float)
    if x.ndim != 4 or x.shape[1] != NUM_CHANNELS:
        raise ShapeMismatch(f"expected (B, 3, H, W) images, got {x.shape}")
    batch = x.shape[0]
    fused = len(model.enhance.gates) == 1
    if fused:
        # Shared gate weights let all three channels ride one batched pass.
        flat = x.transpose(1, 0, 2, 3).reshape(3 * batch, *x.shape[2:])
        out, gv, cache = _enhance_channel_forward(
            flat, model.enhance, channel_index=0, gate_mode=gate_mode
        )
        enhanced = (
            out.reshape(NUM_CHANNELS, batch, NUM_BANDS, *x.shape[2:])
            .transpose(1, 0, 2, 3, 4)
            .reshape(batch, NUM_CHANNELS * NUM_BANDS, *x.shape[2:])
        )
        scores = gv.scores.reshape(NUM_CHANNELS, batch, -1).transpose(1, 0, 2)
        caches = [cache]
    else:
        maps = []
        caches = []
        score_list = []
        for c in range(NUM_CHANNELS):
            out, gv, cache = _enhance_channel_forward(
                x[:, c], model.enhance, channel_index=c, gate_mode=gate_mode
            )
            maps.append(out)
            caches.append(cache)
            score_list.append(gv.scores)
        enhanced = np.concatenate(maps, axis=-3)
        scores = np.stack(score_list, axis=1)  # (B, 3, n)
    gates = binary_threshold(scores)

    z1, a1, z2, a2, feat, logits = _classifier_forward(model.classifier, enhanced)
    probs = sigmoid(logits)

    if labels is None:
        return ForwardResult(
            loss=float("nan"), cls_loss=float("nan"), reg_loss=float("nan"),
            probs=probs, scores=scores, gates=gates, cache=None,
        )

    y = np.asarray(labels, dtype=float)
    l_cls = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    sums = scores.sum(axis=-1)  # (B, 3)
    sparsity = float(np.mean(np.abs(sums - cfg.target_per_channel)))
    l_reg = sparsity * lambda_l1_at(epoch, cfg) + cfg.lambda_cls * normalized_cls_loss(
        l_cls, cfg
    )
    loss = l_cls + l_reg
    cache = None
    if need_cache:
        cache = ForwardCache(
            images=x, labels=y, channel_caches=caches, enhanced=enhanced,
            clf_z1=z1, clf_a1=a1, clf_z2=z2, clf_a2=a2, clf_feat=feat,
            logits=logits, probs=probs, scores=scores, l_cls=l_cls,
            epoch=epoch, cfg=cfg, model=model,
        )
    return ForwardResult(
        loss=loss, cls_loss=l_cls, reg_loss=l_reg,
        probs=probs, scores=scores, gates=gates, cache=cache,
    )


def model_backward(cache: ForwardCache | None, d_loss: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of the total loss for every named parameter."""
    if cache is None:
        raise MissingForwardCache("model_backward needs the forward cache")
    model = cache.model
    cfg = cache.cfg
    batch = cache.images.shape[0]

    # Classification loss reaches the total both directly and through the
    # clamped normalized term inside the regularizer.
    cls_chain = d_loss * (
        1.0 + cfg.lambda_cls * normalized_cls_loss_grad(cache.l_cls, cfg)
    )
    d_logits = cls_chain * (cache.probs - cache.labels) / batch

    clf = model.classifier
    grads: dict[str, np.ndarray] = {}
    grads["clf.fc.weight"] = d_logits @ cache.clf_feat
    grads["clf.fc.bias"] = np.array(d_logits.sum())
    d_feat = d_logits[:, None] * clf.fc_w[None, :]
    spatial = cache.clf_a2.shape[-2] * cache.clf_a2.shape[-1]
    d_a2 = np.broadcast_to(
        (d_feat / spatial)[..., None, None], cache.clf_a2.shape
    )
    d_z2 = d_a2 * (cache.clf_z2 > 0.0)
    d_a1, d_w2, d_b2 = conv2d_vjp(cache.clf_a1, clf.conv2_w, 2, 1, d_z2)
    grads["clf.conv2.weight"] = d_w2
    grads["clf.conv2.bias"] = d_b2
    d_z1 = d_a1 * (cache.clf_z1 > 0.0)
    d_enh, d_w1, d_b1 = conv2d_vjp(cache.enhanced, clf.conv1_w, 2, 1, d_z1)
    grads["clf.conv1.weight"] = d_w1
    grads["clf.conv1.bias"] = d_b1

    # Sparsity term: sign(sum_c - T) * lambda / (channels * batch) on every
    # continuous score (subgradient 0 at the tie).
    sums = cache.scores.sum(axis=-1)
    reg_sign = np.sign(sums - cfg.target_per_channel)
    reg_coeff = d_loss * lambda_l1_at(cache.epoch, cfg) / (NUM_CHANNELS * batch)
    score_extra = reg_sign[..., None] * reg_coeff  # (B, 3, 1) broadcast

    shared_gates = len(model.enhance.gates) == 1
    n_wedges = model.geometry.num_wedges
    for band in range(NUM_BANDS):
        for i in range(n_wedges):
            grads[f"mask.band{band + 1}.wedge{i:03d}"] = np.zeros_like(
                model.enhance.masks.params[band][i]
            )

    if shared_gates and len(cache.channel_caches) == 1:
        # Fused path: undo the channel-major batch packing.
        h, w = cache.images.shape[2:]
        d_flat = (
            d_enh.reshape(batch, NUM_CHANNELS, NUM_BANDS, h, w)
            .transpose(1, 0, 2, 3, 4)
            .reshape(NUM_CHANNELS * batch, NUM_BANDS, h, w)
        )
        extra_flat = (
            np.broadcast_to(score_extra, cache.scores.shape)
            .transpose(1, 0, 2)
            .reshape(NUM_CHANNELS * batch, -1)
        )
        channel_jobs = [(cache.channel_caches[0], d_flat, extra_flat, 0)]
    else:
        channel_jobs = [
            (
                cache.channel_caches[c],
                d_enh[:, 4 * c : 4 * (c + 1)],
                np.broadcast_to(score_extra[:, c], cache.scores[:, c].shape),
                0 if shared_gates else c,
            )
            for c in range(NUM_CHANNELS)
        ]
    for ch_cache, d_maps, extra, gi in channel_jobs:
        ch = _enhance_channel_vjp(
            ch_cache, d_maps, extra_score_grad=extra, need_mag_grads=False
        )
        pre = f"gate{gi}."
        for layer, (dw, db) in enumerate(
            zip(ch.gate.d_conv_weights, ch.gate.d_conv_biases)
        ):
            _accumulate(grads, pre + f"conv{layer}.weight", dw)
            _accumulate(grads, pre + f"conv{layer}.bias", db)
        _accumulate(grads, pre + "mlp.w1", ch.gate.d_w1)
        _accumulate(grads, pre + "mlp.b1", ch.gate.d_b1)
        _accumulate(grads, pre + "mlp.w2", ch.gate.d_w2)
        _accumulate(grads, pre + "mlp.b2", ch.gate.d_b2)
        for band in range(NUM_BANDS):
            for i, dm in enumerate(ch.d_mask_params[band]):
                grads[f"mask.band{band + 1}.wedge{i:03d}"] += dm
    return grads


def _accumulate(grads: dict[str, np.ndarray], key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = np.array(value, dtype=float)


def backward(cache: ForwardCache | None, d_loss: float = 1.0) -> dict[str, np.ndarray]:
    """Alias for :func:`model_backward` (reverse-mode entry point)."""
    return model_backward(cache, d_loss)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSample:
    """One image with its label; fakes record which band was doctored."""

    image: np.ndarray  # (3, H, W) in [0, 1]
    label: int  # 0 real, 1 fake
    doctored_band: int  # 1..3 for fakes, 0 for reals


@dataclass
class SyntheticDataset:
    samples: list[SyntheticSample]
    geometry: CurveletGeometry
    doctor_factor: float
    seed: int

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])

    def doctored_bands(self) -> np.ndarray:
        return np.array([s.doctored_band for s in self.samples])


def band_support_masks(geometry: CurveletGeometry) -> list[np.ndarray]:
    """Boolean frequency-support indicator of bands 1..3 (unshifted grid)."""
    from .masks import band_scale_ranges

    ranges = band_scale_ranges(geometry.num_scales)[:3]
    masks = []
    for lo, hi in ranges:
        acc = np.zeros((geometry.height, geometry.width))
        for w in geometry.wedges:
            if lo <= w.scale <= hi:
                acc[w.rows[:, None], w.cols[None, :]] += w.window ** 2
        masks.append(acc > 0.0)
    return masks


def _spectral_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Zero-mean, unit-rms random field with a slowly decaying spectrum.

    Fixing the rms keeps per-band energies stable across samples, so a
    band-level boost is a clean, learnable signature.
    """
    noise = rng.standard_normal((size, size))
    spec = np.fft.fft2(noise)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    falloff = 1.0 / (1.0 + (radius / 0.1) ** 1.2)
    spec *= falloff
    spec[0, 0] = 0.0
    field = np.fft.ifft2(spec).real
    return field / np.sqrt(np.mean(field * field))


def make_synthetic(
    n: int,
    size: int,
    seed: int,
    num_scales: int | None = None,
    angles_at_scale2: int = 8,
    doctor_factor: float = 1.5,
) -> SyntheticDataset:
    """Balanced real/fake pairs; fakes boost one curvelet band's content.

    Reals are smoothed random blob fields around a fixed mean. The paired
    fake multiplies the real's spectrum by ``doctor_factor`` everywhere on
    the doctored band's frequency support (so every coefficient of that
    band's wedges scales by exactly the factor) and is reconstructed from
    the modified spectrum. Samples alternate real/fake, so any even split
    stays balanced. Fully deterministic per seed.
    """
    if num_scales is None:
        num_scales = max(3, min(5, int(np.log2(size)) - 2))
    geometry = build_geometry(size, size, num_scales, angles_at_scale2)
    supports = band_support_masks(geometry)
    # A 3-scale geometry leaves band 3 empty; doctoring it would be a no-op.
    usable_bands = [b for b in (1, 2, 3) if supports[b - 1].any()]
    rng = np.random.default_rng(seed)
    if n % 2 != 0:
        raise ValueError("n must be even (real/fake pairs)")

    base_mean = 0.35
    amplitude = 0.075  # of a unit-rms field

    def max_amplitude(mean: float, dev: np.ndarray) -> float:
        # Largest a with 0 <= mean + a*dev <= 1 everywhere.
        up = float(dev.max())
        dn = float(-dev.min())
        bound = np.inf
        if up > 0:
            bound = (1.0 - mean) / up
        if dn > 0:
            bound = min(bound, mean / dn)
        return bound

    samples: list[SyntheticSample] = []
    for _ in range(n // 2):
        shared = _spectral_field(rng, size)
        band = usable_bands[int(rng.integers(len(usable_bands)))]
        boost = 1.0 + (doctor_factor - 1.0) * supports[band - 1]
        boost_dc = float(boost[0, 0])
        real = np.empty((NUM_CHANNELS, size, size))
        fake = np.empty((NUM_CHANNELS, size, size))
        for c in range(NUM_CHANNELS):
            own = _spectral_field(rng, size)
            fld = 0.8 * shared + 0.2 * own
            fld /= np.sqrt(np.mean(fld * fld))
            doctored_fld = np.fft.ifft2(np.fft.fft2(fld) * boost).real
            # Cap the deviation so both images of the pair land in [0, 1]
            # without clipping (clipping would leak outside the band).
            a = min(
                amplitude,
                0.98 * max_amplitude(base_mean, fld),
                0.98 * max_amplitude(base_mean * boost_dc, doctored_fld),
            )
            real[c] = base_mean + a * fld
            fake[c] = base_mean * boost_dc + a * doctored_fld
        samples.append(SyntheticSample(image=real, label=0, doctored_band=0))
        samples.append(SyntheticSample(image=fake, label=1, doctored_band=band))
    return SyntheticDataset(
        samples=samples, geometry=geometry, doctor_factor=doctor_factor, seed=seed
    )


# ---------------------------------------------------------------------------
# optimizer and training loop


@dataclass
class OptimizerConfig:
    """Adaptive-moment settings plus an optional gate warmup.

    With ``gate_warmup_epochs`` > 0 the squeeze/excite parameters stay
    frozen (all gates open) for that many epochs, so the head can key on
    raw band content before any pruning starts.
    """

    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 8
    cosine_decay: bool = True
    gate_warmup_epochs: int = 0


@dataclass
class TrainState:
    """Model parameters, optimizer moments, and progress counters."""

    model: FafeModel
    moment1: dict[str, np.ndarray]
    moment2: dict[str, np.ndarray]
    step: int
    epoch: int
    seed: int
    reg: RegConfig
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


def init_train_state(
    model: FafeModel, reg: RegConfig, optimizer: OptimizerConfig, seed: int
) -> TrainState:
    params = model.named_parameters()
    return TrainState(
        model=model,
        moment1={k: np.zeros_like(v) for k, v in params.items()},
        moment2={k: np.zeros_like(v) for k, v in params.items()},
        step=0,
        epoch=0,
        seed=seed,
        reg=reg,
        optimizer=optimizer,
    )


def adam_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr: float,
    freeze_gates: bool = False,
) -> None:
    """One in-place adaptive-moment update. Mask parameters skip decay."""
    opt = state.optimizer
    state.step += 1
    t = state.step
    for key, param in state.model.named_parameters().items():
        if freeze_gates and key.startswith("gate"):
            continue
        g = grads[key]
        if opt.weight_decay > 0.0 and not key.startswith("mask."):
            g = g + opt.weight_decay * param
        m = state.moment1[key]
        v = state.moment2[key]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        m_hat = m / (1.0 - opt.beta1 ** t)
        v_hat = v / (1.0 - opt.beta2 ** t)
        param -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def cosine_lr(base: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 1:
        return base
    return base * 0.5 * (1.0 + np.cos(np.pi * epoch / total_epochs))


def train(
    dataset: SyntheticDataset,
    cfg: RegConfig,
    optimizer: OptimizerConfig | None = None,
    epochs: int = 30,
    seed: int = 0,
    hidden: int = 16,
    model: FafeModel | None = None,
    gate_mode: str = "hard",
    log=None,
) -> tuple[TrainState, list[dict]]:
    """Minimize BCE + regularization over the dataset.

    Returns the final state and one history row per epoch with the mean
    losses, training accuracy, per-channel hard gate counts and continuous
    score sums, the sparsity weight, and the learning rate.
    """
    optimizer = optimizer or OptimizerConfig()
    images = dataset.images()
    labels = dataset.labels()
    if model is None:
        model = build_model(dataset.geometry, hidden=hidden, seed=seed)
        calibrate_classifier(model, images[: min(32, len(images))])
    state = init_train_state(model, cfg, optimizer, seed)
    n = len(dataset.samples)
    rng = np.random.default_rng(seed)
    history: list[dict] = []
    for epoch in range(epochs):
        state.epoch = epoch
        lr = (
            cosine_lr(optimizer.learning_rate, epoch, epochs)
            if optimizer.cosine_decay
            else optimizer.learning_rate
        )
        order = rng.permutation(n)
        tot_loss = tot_cls = tot_reg = 0.0
        correct = 0
        gate_counts = np.zeros(NUM_CHANNELS)
        score_sums = np.zeros(NUM_CHANNELS)
        warming = epoch < optimizer.gate_warmup_epochs
        for start in range(0, n, optimizer.batch_size):
            idx = order[start : start + optimizer.batch_size]
            res = model_forward(
                model, images[idx], labels[idx], cfg, epoch=epoch, gate_mode=gate_mode
            )
            grads = model_backward(res.cache)
            adam_step(state, grads, lr, freeze_gates=warming)
            b = len(idx)
            tot_loss += res.loss * b
            tot_cls += res.cls_loss * b
            tot_reg += res.reg_loss * b
            correct += int(np.sum((res.probs >= 0.5) == (labels[idx] == 1)))
            gate_counts += res.gates.sum(axis=-1).sum(axis=0)
            score_sums += res.scores.sum(axis=-1).sum(axis=0)
        row = {
            "epoch": epoch,
            "lr": lr,
            "lambda_l1": lambda_l1_at(epoch, cfg),
            "loss": tot_loss / n,
            "cls_loss": tot_cls / n,
            "reg_loss": tot_reg / n,
            "accuracy": correct / n,
            "gate_count_r": gate_counts[0] / n,
            "gate_count_g": gate_counts[1] / n,
            "gate_count_b": gate_counts[2] / n,
            "score_sum_r": score_sums[0] / n,
            "score_sum_g": score_sums[1] / n,
            "score_sum_b": score_sums[2] / n,
        }
        history.append(row)
        if log is not None:
            log(row)
    state.epoch = epochs
    return state, history


def predict(
    model: FafeModel, images: np.ndarray, batch_size: int = 8
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probabilities, scores (N,3,n), and gates for a stack of images."""
    probs = []
    scores = []
    gates = []
    cfg = RegConfig()
    for start in range(0, len(images), batch_size):
        res = model_forward(
            model, images[start : start + batch_size], None, cfg, need_cache=False
        )
        probs.append(res.probs)
        scores.append(res.scores)
        gates.append(res.gates)
    return np.concatenate(probs), np.concatenate(scores), np.concatenate(gates)


def save_checkpoint(path, state: TrainState) -> None:
    """Write all parameter tensors plus config and epoch to a CFT archive."""
    from .container import write_archive

    g = state.model.geometry
    reg = state.reg
    header = {
        "kind": "checkpoint",
        "height": g.height,
        "width": g.width,
        "num_scales": g.num_scales,
        "angles_at_scale2": g.angles_at_scale2,
        "hidden": state.model.hidden,
        "gate_sets": len(state.model.enhance.gates),
        "epoch": state.epoch,
        "seed": state.seed,
        "loss_min": repr(reg.loss_min),
        "loss_max": repr(reg.loss_max),
        "lambda_max": repr(reg.lambda_max),
        "lambda_cls": repr(reg.lambda_cls),
        "lambda_l1_base": repr(reg.lambda_l1_base),
        "lambda_l1_increment": repr(reg.lambda_l1_increment),
        "increment_every": reg.increment_every,
        "total_active_target": repr(reg.total_active_target),
        "lambda_l1_constant": (
            "none" if reg.lambda_l1_constant is None else repr(reg.lambda_l1_constant)
        ),
    }
    records = [(np.zeros(()), header)]
    for name, arr in state.model.named_parameters().items():
        records.append((arr, {"name": name}))
    write_archive(path, records)


def load_checkpoint(path) -> tuple[FafeModel, RegConfig, int]:
    """Rebuild a model from a checkpoint archive; returns (model, reg, epoch)."""
    from .container import read_archive

    records = read_archive(path)
    if not records or records[0][1].get("kind") != "checkpoint":
        raise ShapeMismatch(f"{path}: not a checkpoint archive")
    header = records[0][1]
    geometry = build_geometry(
        int(header["height"]),
        int(header["width"]),
        int(header["num_scales"]),
        int(header["angles_at_scale2"]),
    )
    model = build_model(
        geometry,
        hidden=int(header["hidden"]),
        seed=int(header.get("seed", 0)),
        per_channel_gates=int(header.get("gate_sets", 1)) == 3,
    )
    reg = RegConfig(
        loss_min=float(header["loss_min"]),
        loss_max=float(header["loss_max"]),
        lambda_max=float(header["lambda_max"]),
        lambda_cls=float(header["lambda_cls"]),
        lambda_l1_base=float(header["lambda_l1_base"]),
        lambda_l1_increment=float(header["lambda_l1_increment"]),
        increment_every=int(header["increment_every"]),
        total_active_target=float(header["total_active_target"]),
        lambda_l1_constant=(
            None
            if header.get("lambda_l1_constant", "none") == "none"
            else float(header["lambda_l1_constant"])
        ),
    )
    params = model.named_parameters()
    for arr, meta in records[1:]:
        name = meta.get("name")
        if name not in params:
            raise ShapeMismatch(f"{path}: unknown parameter {name!r}")
        target = params[name]
        if target.shape != arr.shape:
            raise ShapeMismatch(
                f"{path}: parameter {name} has shape {arr.shape}, expected {target.shape}"
            )
        target[...] = arr
    return model, reg, int(header["epoch"])


def history_to_csv(history: list[dict]) -> str:
    """Render history rows with full-precision, locale-free formatting."""
    if not history:
        return ""
    cols = list(history[0].keys())
    lines = [",".join(cols)]
    for row in history:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(str(int(v)) if c == "epoch" else repr(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
