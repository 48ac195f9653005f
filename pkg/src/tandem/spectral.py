"""Frequency analysis of gated inputs and gate-agreement diagnostics.

The two encoder branches see differently masked copies of the input. To
compare what each mask keeps, samples are restricted to their most variant
features, the feature vector is read as a signal, and an unnormalized DFT
magnitude spectrum is averaged over samples. Gate-agreement statistics
compare the neural mask with the tree ensemble's level-averaged mask.
"""

from dataclasses import dataclass

import numpy as np

from .gating import gate


class SpectralError(ValueError):
    """Raised on malformed spectral or diagnostic inputs."""


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.size == 0:
        raise SpectralError(f"need a non-empty 2-d array, got shape {X.shape}")
    return X


def top_variant_features(X, k):
    """Indices of the k largest-variance features, descending.

    Ties resolve to the lower index; k is clamped to the feature count.
    """
    X = _as_matrix(X)
    var = X.var(axis=0)
    k = max(0, min(int(k), var.size))
    # stable sort on the negated variances keeps lower indices first on ties
    return np.argsort(-var, kind="stable")[:k]


def aggregate_osdt_gate(x, enc):
    """Mean deterministic gate mask over all trees and levels.

    An ungated encoder contributes the identity mask. A 1-d input returns a
    1-d mask.
    """
    single = np.asarray(x).ndim == 1
    X = _as_matrix(x)
    if enc is None or enc.gates is None:
        out = np.ones_like(X)
    else:
        masks = gate(X, enc.gates, "deterministic").data
        out = masks.reshape(X.shape[0], enc.gates.groups, X.shape[1]).mean(axis=1)
    return out[0] if single else out


def full_spectrum(X):
    """Per-sample unnormalized DFT magnitudes over the full frequency range."""
    X = _as_matrix(X)
    F = X.shape[1]
    if F < 2:
        raise SpectralError(f"need at least 2 features, got {F}")
    d = np.arange(F)
    basis = np.exp(-2j * np.pi * np.outer(d, d) / F)
    return np.abs(X @ basis)


def spectrum(X):
    """One-sided mean magnitude spectrum, frequencies 0..floor(F/2)."""
    X = _as_matrix(X)
    mags = full_spectrum(X)
    return mags.mean(axis=0)[: X.shape[1] // 2 + 1]


def upper_half_mass(spec):
    """Total magnitude in the upper half of a one-sided spectrum."""
    spec = np.asarray(spec, dtype=float)
    return float(spec[(spec.size + 1) // 2 :].sum())


@dataclass
class SpectralReport:
    """Mean spectra of the raw and gate-masked views of one sample group."""

    feature_order: np.ndarray
    spectrum_original: np.ndarray
    spectrum_nn: np.ndarray
    spectrum_osdt: np.ndarray
    n_samples: int
    class_id: object = None


def _nn_gate_field(model, X):
    if model.gate_nn is None:
        return np.ones_like(X)
    return gate(X, model.gate_nn, "deterministic").data


def spectral_report(model, X, k=50, class_id=None):
    """Compare spectra of x, x masked by the neural gate, and x masked by
    the aggregate tree gate, over the k most variant features."""
    X = _as_matrix(X)
    order = top_variant_features(X, k)
    views = (
        X,
        X * _nn_gate_field(model, X),
        X * aggregate_osdt_gate(X, model.osdt),
    )
    spectra = [spectrum(view[:, order]) for view in views]
    return SpectralReport(
        feature_order=order,
        spectrum_original=spectra[0],
        spectrum_nn=spectra[1],
        spectrum_osdt=spectra[2],
        n_samples=X.shape[0],
        class_id=class_id,
    )


@dataclass
class GatingDiagnostics:
    """Agreement statistics between the neural and tree gate fields."""

    bin_act_sim: float
    corr: float
    var_ratio: float
    mean_act_osdt: float
    mean_act_nn: float


def _binary_cosine(a, b):
    # values above 0.5 count as active; exactly 0.5 is inactive
    ba = (a > 0.5).astype(float)
    bb = (b > 0.5).astype(float)
    if np.array_equal(ba, bb):
        # self-cosine is 1 by definition; avoids rounding in dot / norms
        return 1.0
    na = np.linalg.norm(ba)
    nb = np.linalg.norm(bb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(ba @ bb / (na * nb))


def _pearson(a, b):
    if np.array_equal(a, b):
        return 1.0
    va = a.var()
    vb = b.var()
    if va == 0.0 or vb == 0.0:
        return 0.0
    cov = np.mean((a - a.mean()) * (b - b.mean()))
    return float(cov / np.sqrt(va * vb))


def field_statistics(g_nn, g_osdt):
    """Diagnostics over two equally shaped gate fields, flattened."""
    g_nn = np.asarray(g_nn, dtype=float)
    g_osdt = np.asarray(g_osdt, dtype=float)
    if g_nn.shape != g_osdt.shape:
        raise SpectralError(
            f"gate field shapes differ: {g_nn.shape} vs {g_osdt.shape}"
        )
    if g_nn.size == 0:
        raise SpectralError("empty gate fields")
    a = g_nn.ravel()
    b = g_osdt.ravel()
    var_nn = a.var()
    var_osdt = b.var()
    if var_nn == 0.0:
        var_ratio = 1.0 if var_osdt == 0.0 else float("inf")
    else:
        var_ratio = float(var_osdt / var_nn)
    return GatingDiagnostics(
        bin_act_sim=_binary_cosine(a, b),
        corr=_pearson(a, b),
        var_ratio=var_ratio,
        mean_act_osdt=float(b.mean()),
        mean_act_nn=float(a.mean()),
    )


def gating_diagnostics(model, X, columns=None):
    """Gate-agreement diagnostics on a sample batch, optionally restricted
    to a feature subset (e.g. the one-hot columns)."""
    X = _as_matrix(X)
    g_nn = _nn_gate_field(model, X)
    g_osdt = aggregate_osdt_gate(X, model.osdt)
    if columns is not None:
        columns = np.asarray(columns, dtype=int)
        if columns.size == 0:
            raise SpectralError("empty feature subset")
        if columns.min() < 0 or columns.max() >= X.shape[1]:
            raise SpectralError(f"feature subset out of range for {X.shape[1]}")
        g_nn = g_nn[:, columns]
        g_osdt = g_osdt[:, columns]
    return field_statistics(g_nn, g_osdt)
