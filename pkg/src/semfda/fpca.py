"""Functional principal component analysis in a non-orthonormal B-spline basis.

The covariance operator of the centered curves, written in coefficient space,
is ``C W`` with ``C = A^T A / (m - 1)`` and ``W`` the basis Gram matrix. Its
eigenfunctions are obtained from the symmetric problem ``W^{1/2} C W^{1/2}``
and mapped back with ``W^{-1/2}``, which makes them orthonormal in L2.

The symmetric problem is solved through the singular values of
``A W^{1/2} / sqrt(m - 1)`` rather than by an eigen-solver on the product,
so small eigenvalues keep their accuracy relative to the largest one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import BsplineBasis, FunctionalDataSet, eval_curve, make_basis
from .core import KeyKind
from .errors import ParseError, SemError
from .tsv import write_tsv

log = logging.getLogger(__name__)

# singular values below max(m, L) * eps * s_max count as zero (usual matrix-rank tolerance)
RANK_EPS = np.finfo(float).eps
MODEL_FORMAT = "semfda-fpca-model"
MODEL_VERSION = 1


@dataclass
class FpcaModel:
    basis: BsplineBasis
    mean_coeffs: np.ndarray
    eig_coeffs: np.ndarray  # L x K, column j holds the coefficients of eigenfunction j
    eigvals: np.ndarray
    scores: np.ndarray  # m x K
    contrib: np.ndarray
    K_selected: int
    cohorts: list = field(default_factory=list)
    kind: KeyKind | None = None
    theta: float = 0.995
    degenerate: bool = False

    @property
    def rank(self) -> int:
        return self.eigvals.size

    def key_coeffs(self, scores_row) -> np.ndarray:
        """Spline coefficients of ``mean + sum_j z_j e_j`` for the given scores."""
        z = np.atleast_1d(np.asarray(scores_row, dtype=float))
        if z.size > self.rank:
            raise SemError(f"{z.size} scores given but the model has rank {self.rank}")
        return self.mean_coeffs + self.eig_coeffs[:, : z.size] @ z

    def eigenfunctions(self, t) -> np.ndarray:
        return self.basis.design(t) @ self.eig_coeffs


def _sym_sqrt(W: np.ndarray):
    vals, vecs = np.linalg.eigh(W)
    if vals.min() <= 0:
        raise SemError("Gram matrix is not positive definite")
    half = (vecs * np.sqrt(vals)) @ vecs.T
    inv_half = (vecs / np.sqrt(vals)) @ vecs.T
    return 0.5 * (half + half.T), 0.5 * (inv_half + inv_half.T)


def select_k(eigvals, theta: float) -> int:
    """Smallest number of leading components whose share of variance reaches ``theta``.

    ``theta = 1`` keeps every component with a positive eigenvalue (the
    numerical rank). All-zero eigenvalues give 1 by convention (and a logged
    warning).
    """
    lam = np.clip(np.asarray(eigvals, dtype=float), 0.0, None)
    if not 0 < theta <= 1:
        raise SemError(f"theta must lie in (0, 1], got {theta}")
    total = lam.sum()
    if total <= 0:
        log.warning("all eigenvalues are zero; selecting one component")
        return 1
    if theta >= 1.0:
        return int(np.count_nonzero(lam > 0))
    ratio = np.cumsum(lam) / total
    return int(np.argmax(ratio >= theta - 1e-12) + 1)


def fit_fpca(fds: FunctionalDataSet, theta: float = 0.995, kind=None) -> FpcaModel:
    A = np.asarray(fds.centered, dtype=float)
    m = A.shape[0]
    if m < 2:
        raise SemError(f"FPCA needs m >= 2 cohorts, got {m}")
    W = fds.basis.gram
    W_half, W_inv_half = _sym_sqrt(W)
    Y = (A @ W_half) / np.sqrt(m - 1)
    _, sv, vt = np.linalg.svd(Y, full_matrices=False)
    vals, vecs = sv**2, vt.T

    degenerate = not sv[0] > 0
    tol = max(Y.shape) * RANK_EPS * sv[0]
    rank = 1 if degenerate else int(np.sum(sv > tol))
    lam = np.clip(vals[:rank], 0.0, None)
    B = W_inv_half @ vecs[:, :rank]

    # fix signs: positive integral, ties broken by the value at the left end
    integ = fds.basis.integrals() @ B
    left = B[0, :]
    flip = (integ < -1e-12 * np.abs(B).sum(axis=0)) | (
        (np.abs(integ) <= 1e-12 * np.abs(B).sum(axis=0)) & (left < 0)
    )
    B[:, flip] *= -1.0

    scores = A @ W @ B
    if degenerate:
        scores = np.zeros_like(scores)
        contrib = np.ones(1)
    else:
        contrib = np.cumsum(lam) / lam.sum()
    return FpcaModel(
        basis=fds.basis,
        mean_coeffs=np.asarray(fds.mean_coeffs, dtype=float).copy(),
        eig_coeffs=B,
        eigvals=lam,
        scores=scores,
        contrib=contrib,
        K_selected=select_k(lam, theta),
        cohorts=list(fds.cohorts),
        kind=None if kind is None else KeyKind(kind),
        theta=theta,
        degenerate=degenerate,
    )


def reconstruct(model: FpcaModel, scores_row, t):
    """Key value(s) at ``t`` from the mean curve plus score-weighted eigenfunctions."""
    return eval_curve(model.key_coeffs(scores_row), model.basis, t)


def save_model(model: FpcaModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": None if model.kind is None else model.kind.value,
        "basis": model.basis.spec(),
        "theta": model.theta,
        "K_selected": model.K_selected,
        "degenerate": model.degenerate,
        "cohorts": [int(c) for c in model.cohorts],
        "mean_coeffs": model.mean_coeffs.tolist(),
        "eigvals": model.eigvals.tolist(),
        "contrib": model.contrib.tolist(),
        "eig_coeffs": model.eig_coeffs.tolist(),
        "scores": model.scores.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> FpcaModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: not a model file ({err})") from None
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ParseError(
            f"{path}: expected {MODEL_FORMAT} v{MODEL_VERSION}, "
            f"got {doc.get('format')} v{doc.get('version')}"
        )
    b = doc["basis"]
    basis = make_basis(b["S"], b["w"], b["L"], b["order"])
    L = basis.L
    eig = np.array(doc["eig_coeffs"], dtype=float).reshape(L, -1)
    return FpcaModel(
        basis=basis,
        mean_coeffs=np.array(doc["mean_coeffs"], dtype=float),
        eig_coeffs=eig,
        eigvals=np.array(doc["eigvals"], dtype=float),
        scores=np.array(doc["scores"], dtype=float).reshape(-1, eig.shape[1]),
        contrib=np.array(doc["contrib"], dtype=float),
        K_selected=int(doc["K_selected"]),
        cohorts=list(doc["cohorts"]),
        kind=None if doc["kind"] is None else KeyKind(doc["kind"]),
        theta=float(doc["theta"]),
        degenerate=bool(doc["degenerate"]),
    )


def write_eigen_summary(path, model: FpcaModel) -> None:
    rows = (
        (j + 1, float(v), float(c), int(j < model.K_selected))
        for j, (v, c) in enumerate(zip(model.eigvals, model.contrib))
    )
    write_tsv(path, "eigenvalues", ("component", "eigval", "contrib", "selected"), rows)
