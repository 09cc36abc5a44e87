"""Accuracy and AUC over group-averaged scores, plus gate reporting.

Frame scores belonging to one group (a video, or a standalone sample) are
averaged before thresholding or ranking, so every group contributes one
decision. AUC is the trapezoidal area under the ROC with tied scores
averaged, which coincides with the pairwise rank statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, SingleClassInput


@dataclass
class ScoredItem:
    """One group's frame scores and its ground-truth label."""

    group_id: str
    frame_scores: list[float]
    label: int

    def mean_score(self) -> float:
        if not self.frame_scores:
            raise EmptyInput(f"group {self.group_id!r} has no frame scores")
        return float(np.mean(self.frame_scores))


def accuracy(items: list[ScoredItem], threshold: float = 0.5) -> float:
    """Fraction of groups whose mean score thresholds to the right label."""
    if not items:
        raise EmptyInput("accuracy of an empty collection")
    correct = sum(
        1 for it in items if (it.mean_score() >= threshold) == (it.label == 1)
    )
    return correct / len(items)


def auc(items: list[ScoredItem]) -> float:
    """Area under the ROC of group-mean scores (tie-averaged trapezoids)."""
    if not items:
        raise EmptyInput("auc of an empty collection")
    scores = np.array([it.mean_score() for it in items])
    labels = np.array([it.label for it in items])
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("auc needs both labels present")
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    labels = labels[order]
    # Cumulative TP/FP at each distinct threshold, then trapezoids.
    distinct = np.nonzero(np.diff(scores))[0]
    cut = np.r_[distinct, len(scores) - 1]
    tps = np.cumsum(labels == 1)[cut]
    fps = np.cumsum(labels == 0)[cut]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class WedgeReportRow:
    wedge: int  # 1-based flat index
    scale: int
    angle: int
    channel: int
    activation_frequency: float
    mean_score: float


@dataclass
class GatesReport:
    rows: list[WedgeReportRow]
    scores: np.ndarray  # (samples, channels, wedges)
    gates: np.ndarray
    doctored_bands: np.ndarray | None = field(default=None)

    def to_csv(self) -> str:
        lines = ["wedge,scale,angle,channel,activation_frequency,mean_score"]
        for r in self.rows:
            lines.append(
                f"{r.wedge},{r.scale},{r.angle},{r.channel},"
                f"{r.activation_frequency!r},{r.mean_score!r}"
            )
        return "\n".join(lines) + "\n"

    def per_sample_csv(self) -> str:
        lines = ["sample,channel,wedge,scale,angle,score,gate"]
        n_samples, n_channels, n_wedges = self.scores.shape
        geom_rows = {(r.wedge, r.channel): r for r in self.rows}
        for s in range(n_samples):
            for c in range(n_channels):
                for w in range(n_wedges):
                    meta = geom_rows[(w + 1, c)]
                    lines.append(
                        f"{s},{c},{w + 1},{meta.scale},{meta.angle},"
                        f"{self.scores[s, c, w]!r},{int(self.gates[s, c, w])}"
                    )
        return "\n".join(lines) + "\n"

    def heatmap(self) -> np.ndarray:
        """Channel-averaged scores as a (wedges, samples) uint8 image."""
        mean_scores = self.scores.mean(axis=1).T  # (wedges, samples)
        return np.clip(mean_scores * 255.0, 0.0, 255.0).astype(np.uint8)

    def band_activation(
        self, band_wedges: np.ndarray, doctored_band: int
    ) -> tuple[float, float]:
        """Mean gate activation inside vs outside one band, over the fake
        samples doctored in that band."""
        if self.doctored_bands is None:
            raise EmptyInput("report carries no doctored-band metadata")
        sel = self.doctored_bands == doctored_band
        if not sel.any():
            raise EmptyInput(f"no samples doctored in band {doctored_band}")
        per_wedge = self.gates[sel].mean(axis=(0, 1))
        outside = np.setdiff1d(np.arange(per_wedge.size), band_wedges)
        return float(per_wedge[band_wedges].mean()), float(per_wedge[outside].mean())


def gates_report(model, images: np.ndarray, doctored_bands: np.ndarray | None = None) -> GatesReport:
    """Per-wedge activation frequency and mean score over a dataset."""
    from .training import predict

    _, scores, gates = predict(model, np.asarray(images, dtype=float))
    geometry = model.geometry
    rows = []
    for c in range(scores.shape[1]):
        for i, info in enumerate(geometry.wedges):
            rows.append(
                WedgeReportRow(
                    wedge=i + 1,
                    scale=info.scale,
                    angle=info.angle,
                    channel=c,
                    activation_frequency=float(gates[:, c, i].mean()),
                    mean_score=float(scores[:, c, i].mean()),
                )
            )
    return GatesReport(
        rows=rows,
        scores=scores,
        gates=gates,
        doctored_bands=None if doctored_bands is None else np.asarray(doctored_bands),
    )
