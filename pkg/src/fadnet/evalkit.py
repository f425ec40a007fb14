"""Listener-motion metrics (L2, Fréchet distance, Shannon index, TLCC) and the
classical baselines, computed separately on the expression and rotation views."""
import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .motion import split_metric_views

VIEWS = ("expression", "rotation")
BASELINES = ("nn_motion", "nn_audio", "random", "mirror", "median")


# -- metrics -------------------------------------------------------------------

def l2_metric(pred, gt) -> float:
    """Mean over frames of the per-frame Euclidean distance."""
    pred, gt = np.asarray(pred, np.float64), np.asarray(gt, np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def _sym_sqrt(a):
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a, b, reg: float = 1e-6) -> float:
    """Fréchet distance between Gaussians fitted to two sample sets [N, D]."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least two samples per set")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample dimensions differ")
    D = a.shape[1]
    mu_a, mu_b = a.mean(0), b.mean(0)
    sa = np.atleast_2d(np.cov(a, rowvar=False)) + reg * np.eye(D)
    sb = np.atleast_2d(np.cov(b, rowvar=False)) + reg * np.eye(D)
    # (Sa Sb)^{1/2} has the trace of (Sa^{1/2} Sb Sa^{1/2})^{1/2}, which is symmetric PSD
    ra = _sym_sqrt(sa)
    w = np.linalg.eigvalsh((ra @ sb @ ra + (ra @ sb @ ra).T) / 2)
    tr_cross = np.sqrt(np.clip(w, 0, None)).sum()
    diff = mu_a - mu_b
    return float(max(diff @ diff + np.trace(sa) + np.trace(sb) - 2 * tr_cross, 0.0))


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray
    seed: int
    max_iters: int
    view: str = ""
    history: tuple = ()  # within-cluster SSE after each Lloyd iteration

    def assign(self, x) -> np.ndarray:
        x = np.asarray(x, np.float64)
        if x.ndim != 2 or x.shape[1] != self.centroids.shape[1]:
            raise ValueError(f"expected [N, {self.centroids.shape[1]}] data, got {x.shape}")
        d = ((x[:, None, :] - self.centroids[None]) ** 2).sum(-1)
        return np.argmin(d, axis=1)  # argmin returns the lowest index on ties


def _sq_dists(x, c):
    return ((x[:, None, :] - c[None]) ** 2).sum(-1)


def kmeans_fit(data, k: int, seed: int = 0, max_iters: int = 200, view: str = "") -> KMeansModel:
    """k-means++ seeding followed by Lloyd iterations to an assignment fixpoint."""
    x = np.asarray(data, np.float64)
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = [x[rng.integers(n)]]
    for _ in range(1, k):
        d = _sq_dists(x, np.array(centroids)).min(1)
        total = d.sum()
        idx = rng.choice(n, p=d / total) if total > 0 else rng.integers(n)
        centroids.append(x[idx])
    c = np.array(centroids)
    labels = None
    history = []
    for _ in range(max_iters):
        new = np.argmin(_sq_dists(x, c), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members):
                c[j] = members.mean(0)
        history.append(float(((x - c[labels]) ** 2).sum()))
    return KMeansModel(k, c, seed, max_iters, view, tuple(history))


def shannon_index(preds, model: KMeansModel) -> float:
    """Entropy (nats) of the cluster-assignment histogram of ``preds``."""
    labels = model.assign(np.asarray(preds).reshape(-1, model.centroids.shape[1]))
    p = np.bincount(labels, minlength=model.k) / labels.size
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) + 0.0


def _norm_trace(x):
    x = np.asarray(x, np.float64)
    if x.ndim == 1:
        return x - x.mean()
    return np.linalg.norm(x - x.mean(0), axis=1)


def _pearson(a, b):
    a, b = a - a.mean(), b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else 0.0


def tlcc(listener, speaker, max_lag: int = 30):
    """Peak time-lagged cross-correlation of the two norm traces.

    Positive lag ``d`` pairs ``listener[t]`` with ``speaker[t - d]`` (listener follows).
    Returns (peak_corr, peak_lag); ties go to the smallest |lag|.
    """
    a, b = _norm_trace(listener), _norm_trace(speaker)
    T = a.shape[0]
    if b.shape[0] != T:
        raise ValueError("traces must have equal length")
    if T <= 2 * max_lag:
        raise ValueError(f"need T > 2*max_lag, got T={T}, max_lag={max_lag}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("degenerate signal")
    best, best_lag = -np.inf, 0
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda v: (abs(v), v)):
        c = _pearson(a[lag:], b[:T - lag]) if lag >= 0 else _pearson(a[:T + lag], b[-lag:])
        if c > best + 1e-12:
            best, best_lag = c, lag
    return best, best_lag


def tlcc_at_lag(listener, speaker, lag: int) -> float:
    a, b = _norm_trace(listener), _norm_trace(speaker)
    T = a.shape[0]
    return _pearson(a[lag:], b[:T - lag]) if lag >= 0 else _pearson(a[:T + lag], b[-lag:])


# -- baselines --------------------------------------------------------------------

def run_baseline(kind: str, train, query: dict, seed: int = 0) -> np.ndarray:
    """Listener motion [T, 56] predicted by a classical baseline.

    ``train`` is a dict with ``listener_motion`` [N, T, 56] and, as needed,
    ``speaker_motion`` [N, T, 56] / ``audio_features`` [N, ...]. ``query`` carries
    ``speaker_motion`` [T, 56] and/or ``audio_features`` for one sequence.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    listener = np.asarray(train["listener_motion"])
    if listener.shape[0] == 0:
        raise ValueError("empty training corpus")
    T = listener.shape[1]
    if kind in ("nn_motion", "mirror") and query.get("speaker_motion") is None:
        raise ValueError(f"{kind} needs the query's speaker_motion")
    if kind == "nn_audio" and query.get("audio_features") is None:
        raise ValueError("nn_audio needs the query's audio_features")

    if kind == "mirror":
        return np.array(query["speaker_motion"], copy=True)
    if kind == "median":
        med = np.median(listener.reshape(-1, listener.shape[-1]), axis=0)
        return np.tile(med, (T, 1))
    if kind == "random":
        return listener[np.random.default_rng(seed).integers(len(listener))].copy()
    key = "speaker_motion" if kind == "nn_motion" else "audio_features"
    bank = np.asarray(train[key], np.float64).reshape(len(listener), -1)
    q = np.asarray(query[key], np.float64).reshape(-1)
    if q.shape[0] != bank.shape[1]:
        raise ValueError(f"query {key} has {q.shape[0]} values, corpus has {bank.shape[1]}")
    idx = int(np.argmin(((bank - q) ** 2).sum(1)))
    return listener[idx].copy()


# -- reports ------------------------------------------------------------------------

@dataclass
class MetricReport:
    name: str
    view: str
    l2: float
    fd: float
    si: float
    tlcc_peak_corr: float
    tlcc_peak_lag: float
    tlcc_fixed_lag_corr: float

    def validate(self):
        assert self.l2 >= 0 and self.fd >= 0 and self.si >= 0
        assert abs(self.tlcc_peak_corr) <= 1 + 1e-12


def evaluate(name, preds, gts, speakers, kmeans: dict, max_lag=30, fixed_lag=4):
    """Per-view reports for paired lists of [T, 56] predictions / ground truths.

    ``speakers`` are the matching speaker-motion sequences used for TLCC;
    ``kmeans`` maps view -> fitted :class:`KMeansModel`.
    """
    reports = []
    for vi, view in enumerate(VIEWS):
        p_views = [split_metric_views(p)[vi] for p in preds]
        g_views = [split_metric_views(g)[vi] for g in gts]
        s_views = [split_metric_views(s)[vi] for s in speakers]
        l2 = float(np.mean([l2_metric(p, g) for p, g in zip(p_views, g_views)]))
        fd = frechet_distance(np.concatenate(p_views), np.concatenate(g_views))
        si = float(np.mean([shannon_index(p, kmeans[view]) for p in p_views]))
        peaks, lags, fixed = [], [], []
        for p, s in zip(p_views, s_views):
            lag = min(max_lag, (len(p) - 1) // 2)
            try:
                c, d = tlcc(p, s, lag)
                fixed.append(tlcc_at_lag(p, s, fixed_lag))
            except ValueError:  # constant output (e.g. median) has no correlation
                c, d = 0.0, 0
                fixed.append(0.0)
            peaks.append(c)
            lags.append(d)
        reports.append(MetricReport(name, view, l2, fd, si, float(np.mean(peaks)),
                                    float(np.mean(lags)), float(np.mean(fixed))))
    return reports


def write_reports(reports, out_prefix):
    """Write ``<prefix>.csv`` and ``<prefix>.json``; returns both paths."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    rows = [asdict(r) for r in reports]
    csv_path = out_prefix.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    json_path = out_prefix.with_suffix(".json")
    grouped = {}
    for r in rows:
        grouped.setdefault(r["name"], {})[r["view"]] = {
            "L2": r["l2"], "FD": r["fd"], "SI": r["si"], "TLCC": r["tlcc_peak_corr"],
            "TLCC_lag": r["tlcc_peak_lag"], "TLCC_fixed_lag": r["tlcc_fixed_lag_corr"]}
    json_path.write_text(json.dumps(grouped, indent=1, sort_keys=True))
    return csv_path, json_path
