"""Attention-map statistics: JS divergence, entropy, and metric MDS by stress majorization."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeMismatch


class LengthMismatch(ValueError):
    pass


def _xlogy_ratio(p, q):
    # sum p log(p/q) with 0 log 0 = 0; q > 0 wherever p > 0 for the mixtures used here
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl_divergence(p, q) -> float:
    return _xlogy_ratio(p, q)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats; lies in ``[0, ln 2]``."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise LengthMismatch(f"distributions of length {p.size} and {q.size}")
    m = 0.5 * (p + q)
    return 0.5 * _xlogy_ratio(p, m) + 0.5 * _xlogy_ratio(q, m)


def _weights(a) -> np.ndarray:
    return np.asarray(getattr(a, "weights", a), dtype=np.float64)


@dataclass
class MapDivergence:
    value: float
    rows: np.ndarray


def map_divergence(a, b, mode: str = "row-mean") -> MapDivergence:
    """Divergence between two equally shaped attention maps.

    ``row-mean`` averages the JS divergence of aligned rows (per-row values are
    kept); ``flatten`` treats each whole map, renormalized, as one distribution.
    """
    wa, wb = _weights(a), _weights(b)
    if wa.shape != wb.shape:
        raise ShapeMismatch(f"maps of shape {wa.shape} and {wb.shape}")
    rows = np.array([js_divergence(ra, rb) for ra, rb in zip(wa, wb)])
    if mode == "row-mean":
        return MapDivergence(float(rows.mean()), rows)
    if mode == "flatten":
        return MapDivergence(js_divergence(wa.ravel() / wa.sum(), wb.ravel() / wb.sum()), rows)
    raise ValueError(f"unknown mode {mode!r}")


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def attention_entropy(m) -> tuple[np.ndarray, float]:
    """Entropy (nats) of every row and their mean."""
    rows = np.array([entropy(r) for r in _weights(m)])
    return rows, float(rows.mean())


def layer_mean_entropy(maps) -> dict:
    """Mean row entropy over all heads of each layer, keyed by layer index."""
    acc: dict = {}
    for m in maps:
        rows, _ = attention_entropy(m)
        acc.setdefault(m.layer, []).append(rows)
    return {layer: float(np.concatenate(v).mean()) for layer, v in sorted(acc.items(), key=lambda kv: kv[0])}


def dissimilarity_matrix(maps, mode: str = "row-mean") -> np.ndarray:
    n = len(maps)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = map_divergence(maps[i], maps[j], mode).value
    return D


# ---------------------------------------------------------------------------
# multidimensional scaling


@dataclass
class MdsResult:
    coords: np.ndarray
    stress: float
    history: list


def _distances(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def raw_stress(D, X) -> float:
    iu = np.triu_indices(len(D), 1)
    return float(((_distances(X)[iu] - D[iu]) ** 2).sum())


def classical_mds(D, dims: int = 2) -> np.ndarray:
    """Torgerson scaling: top eigenvectors of the double-centered squared dissimilarities."""
    D = np.asarray(D, dtype=np.float64)
    n = len(D)
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D ** 2) @ J
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1][:dims]
    vals = np.clip(vals[order], 0.0, None)
    X = vecs[:, order] * np.sqrt(vals)
    if X.shape[1] < dims:
        X = np.hstack([X, np.zeros((n, dims - X.shape[1]))])
    return X


def _check_dissimilarity(D):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeMismatch("dissimilarity matrix must be square")
    if not np.allclose(D, D.T) or np.any(np.diag(D) != 0) or np.any(D < 0):
        raise ValueError("dissimilarity matrix must be symmetric, non-negative, zero on the diagonal")
    return D


def mds_embed(D, dims: int = 2, iters: int = 300, seed: int = 0, tol: float = 1e-12,
              init: str = "classical") -> MdsResult:
    """Metric MDS by SMACOF (unit weights) on raw dissimilarities.

    ``history`` holds the stress of the start configuration followed by the
    stress after each Guttman transform; it never increases.
    """
    D = _check_dissimilarity(D)
    n = len(D)
    if init == "classical":
        X = classical_mds(D, dims)
    elif init == "random":
        X = np.random.default_rng(seed).normal(size=(n, dims))
    else:
        raise ValueError(f"unknown init {init!r}")
    history = [raw_stress(D, X)]
    for _ in range(iters):
        dist = _distances(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, D / dist, 0.0)
        Bm = -ratio
        np.fill_diagonal(Bm, 0.0)
        np.fill_diagonal(Bm, -Bm.sum(axis=1))
        X_new = Bm @ X / n
        s = raw_stress(D, X_new)
        if s > history[-1]:
            # only rounding can cause this; keep the better configuration
            break
        X = X_new
        history.append(s)
        if history[-2] - s <= tol * max(history[-2], 1.0):
            break
    return MdsResult(X, history[-1], history)


def procrustes_residual(A, B) -> float:
    """Residual after the best rigid motion (rotation/reflection + translation) of ``B`` onto ``A``."""
    A = np.asarray(A, dtype=np.float64) - np.mean(A, axis=0)
    B = np.asarray(B, dtype=np.float64) - np.mean(B, axis=0)
    U, _, Vt = np.linalg.svd(B.T @ A)
    R = U @ Vt
    return float(np.linalg.norm(A - B @ R))


# ---------------------------------------------------------------------------
# exports


def _label(m, i):
    parts = [m.kind or "map"]
    if m.layer is not None:
        parts.append(f"layer{m.layer}")
    if m.head is not None:
        parts.append(f"head{m.head}")
    return ".".join(parts) if len(parts) > 1 else f"{parts[0]}{i}"


def write_matrix_csv(D, labels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, D):
            w.writerow([lab] + [f"{v:.10g}" for v in row])


def write_row_divergence_csv(div: MapDivergence, tokens, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "token", "js_divergence"])
        for i, v in enumerate(div.rows):
            w.writerow([i, tokens[i] if i < len(tokens) else "", f"{v:.10g}"])


def write_entropy_csv(maps, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "layer", "head", "mean_entropy", "uniform_baseline"])
        for m in maps:
            _, mean = attention_entropy(m)
            w.writerow([m.kind, "" if m.layer is None else m.layer, "" if m.head is None else m.head,
                        f"{mean:.10g}", f"{np.log(m.weights.shape[1]):.10g}"])


def write_coords_csv(result: MdsResult, maps, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "layer", "head", "x", "y"])
        for i, (m, xy) in enumerate(zip(maps, result.coords)):
            w.writerow([_label(m, i), "" if m.layer is None else m.layer, "" if m.head is None else m.head,
                        f"{xy[0]:.10g}", f"{xy[1]:.10g}" if len(xy) > 1 else ""])
