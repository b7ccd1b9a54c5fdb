"""Comparison mechanisms: identity, Fourier-k, wavelet-k, Kalman smoothing.

Identity perturbs every cell of the normalized matrix with a per-slice
budget share and denormalizes.  The transform baselines compress each
pillar series to k coefficients, perturb those, and invert; the Kalman
baseline perturbs every point and then smooths with a constant-velocity
filter (post-processing).  The transform-domain noise scale sqrt(k) *
sensitivity / eps follows the usual Fourier-perturbation calibration; the
sensitivity argument is injectable so other calibrations can be tested.

eps may be ``inf`` in the series-level functions, which skips noise
entirely; round-trip tests use that vanishing-noise limit.
"""

from __future__ import annotations

import math

import numpy as np

from .dp import PARALLEL, SEQUENTIAL, BudgetLedger, laplace_sample
from .matrix import ConsumptionMatrix, NormalizationParams

BASELINE_MECHANISMS = ("identity", "fourier", "wavelet", "kalman")


def identity_sanitize(norm: ConsumptionMatrix, eps_tot: float, ledger: BudgetLedger,
                      rng: np.random.Generator, norm_params: NormalizationParams) -> ConsumptionMatrix:
    """Per-cell Laplace noise on the normalized matrix, denormalized back.

    Each time slice gets an equal budget share eps_tot / c_t (sequential in
    time); the cells inside a slice hold disjoint households and compose in
    parallel, so a slice is one charge.  Normalized cells have sensitivity 1.
    """
    if norm.provenance != "normalized":
        raise ValueError(f"identity expects the normalized matrix, got {norm.provenance!r}")
    c_t = norm.grid.c_t
    eps_slice = eps_tot / c_t
    noisy = np.empty_like(norm.cells)
    for t in range(c_t):
        ledger.charge(f"identity-t{t}", eps_slice, "sanitize", SEQUENTIAL)
        noisy[:, :, t] = norm.cells[:, :, t] + laplace_sample(1.0 / eps_slice, rng,
                                                              size=norm.cells[:, :, t].shape)
    # back to raw units: budget-free post-processing of sanitized values
    raw_units = noisy * norm_params.span + norm_params.global_min
    return ConsumptionMatrix(norm.grid, raw_units, "sanitized")


# ---------------------------------------------------------------------------
# Fourier
# ---------------------------------------------------------------------------


def fourier_perturb(series, k: int, eps: float, sensitivity: float,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Keep the k lowest-frequency DFT coefficients, perturb, invert.

    Real and imaginary parts of each kept coefficient get independent
    Laplace noise of scale sqrt(k) * sensitivity / eps.
    """
    series = np.asarray(series, dtype=float)
    t = len(series)
    if not 1 <= k <= t:
        raise ValueError(f"k must be in 1..{t}, got {k}")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    coef = np.fft.rfft(series)
    kept = min(k, len(coef))
    out = np.zeros_like(coef)
    out[:kept] = coef[:kept]
    if math.isfinite(eps):
        if eps <= 0:
            raise ValueError("eps must be positive")
        scale = math.sqrt(k) * sensitivity / eps
        out[:kept] += laplace_sample(scale, rng, size=kept)
        out[:kept] += 1j * laplace_sample(scale, rng, size=kept)
    return np.fft.irfft(out, n=t)


# ---------------------------------------------------------------------------
# Haar wavelet
# ---------------------------------------------------------------------------


def haar_forward(x: np.ndarray) -> np.ndarray:
    """Full-depth orthonormal Haar transform; length must be a power of two."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")
    out = x.copy()
    length = n
    root2 = math.sqrt(2.0)
    while length > 1:
        half = length // 2
        seg = out[:length].copy()
        out[:half] = (seg[0::2] + seg[1::2]) / root2
        out[half:length] = (seg[0::2] - seg[1::2]) / root2
        length = half
    return out


def haar_inverse(w: np.ndarray) -> np.ndarray:
    """Inverse of :func:`haar_forward`."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")
    out = w.copy()
    length = 2
    root2 = math.sqrt(2.0)
    while length <= n:
        half = length // 2
        approx = out[:half].copy()
        detail = out[half:length].copy()
        out[0:length:2] = (approx + detail) / root2
        out[1:length:2] = (approx - detail) / root2
        length *= 2
    return out


def wavelet_perturb(series, k: int, eps: float, sensitivity: float,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Keep the k largest-magnitude Haar coefficients, perturb, invert.

    The series is zero-padded to the next power of two and truncated back
    after the inverse.  Ties break deterministically by (magnitude desc,
    index asc).
    """
    series = np.asarray(series, dtype=float)
    t = len(series)
    padded_len = 1 << max(0, (t - 1).bit_length())
    if not 1 <= k <= padded_len:
        raise ValueError(f"k must be in 1..{padded_len}, got {k}")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    padded = np.zeros(padded_len)
    padded[:t] = series
    w = haar_forward(padded)
    order = np.lexsort((np.arange(padded_len), -np.abs(w)))
    kept_idx = order[:k]
    out = np.zeros_like(w)
    out[kept_idx] = w[kept_idx]
    if math.isfinite(eps):
        if eps <= 0:
            raise ValueError("eps must be positive")
        scale = math.sqrt(k) * sensitivity / eps
        out[kept_idx] += laplace_sample(scale, rng, size=k)
    return haar_inverse(out)[:t]


# ---------------------------------------------------------------------------
# Kalman
# ---------------------------------------------------------------------------

#: process-to-measurement variance ratio of the constant-velocity smoother;
#: fixed so the filter's behavior is scale-free in the noise level
KALMAN_PROCESS_RATIO = 0.1


def kalman_sanitize(series, eps: float, sensitivity: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Perturb every point with its per-step budget share, then smooth.

    Noise scale is sensitivity / (eps / T).  The smoother is a scalar
    constant-velocity Kalman filter with measurement variance equal to the
    Laplace noise variance 2 * scale^2; filtering the already-noisy series
    is budget-free post-processing.
    """
    series = np.asarray(series, dtype=float)
    t = len(series)
    if eps <= 0:
        raise ValueError("eps must be positive")
    scale = sensitivity / (eps / t)
    noisy = series + laplace_sample(scale, rng, size=t)

    r = 2.0 * scale * scale
    q = KALMAN_PROCESS_RATIO * r
    # discrete white-noise-acceleration process covariance, dt = 1
    q_mat = q * np.array([[0.25, 0.5], [0.5, 1.0]])
    f = np.array([[1.0, 1.0], [0.0, 1.0]])

    state = np.array([noisy[0], 0.0])
    cov = np.array([[r, 0.0], [0.0, r]])
    out = np.empty(t)
    out[0] = state[0]
    for i in range(1, t):
        state = f @ state
        cov = f @ cov @ f.T + q_mat
        innovation = noisy[i] - state[0]
        s_var = cov[0, 0] + r
        gain = cov[:, 0] / s_var
        state = state + gain * innovation
        cov = cov - np.outer(gain, cov[0, :])
        out[i] = state[0]
    return out


# ---------------------------------------------------------------------------
# Matrix-level drivers
# ---------------------------------------------------------------------------


def transform_sanitize_matrix(cons: ConsumptionMatrix, mechanism: str, k: int, eps_tot: float,
                              sensitivity: float, ledger: BudgetLedger,
                              rng: np.random.Generator) -> ConsumptionMatrix:
    """Apply a per-series transform baseline to every pillar of the raw matrix.

    Pillars hold disjoint households, so each pillar's eps_tot charge joins
    one parallel group and the run consumes eps_tot overall.
    """
    if mechanism not in ("fourier", "wavelet"):
        raise ValueError(f"unknown transform mechanism {mechanism!r}")
    if cons.provenance != "raw":
        raise ValueError(f"expected the raw consumption matrix, got {cons.provenance!r}")
    perturb = fourier_perturb if mechanism == "fourier" else wavelet_perturb
    out = np.empty_like(cons.cells)
    for x in range(cons.grid.c_x):
        for y in range(cons.grid.c_y):
            ledger.charge(f"{mechanism}-pillar-{x}-{y}", eps_tot, "sanitize",
                          PARALLEL, group=f"{mechanism}-pillars")
            out[x, y, :] = perturb(cons.cells[x, y, :], k, eps_tot, sensitivity, rng)
    return ConsumptionMatrix(cons.grid, out, "sanitized")


def kalman_sanitize_matrix(cons: ConsumptionMatrix, eps_tot: float, sensitivity: float,
                           ledger: BudgetLedger, rng: np.random.Generator) -> ConsumptionMatrix:
    """Kalman baseline over every pillar; time slices charge sequentially."""
    if cons.provenance != "raw":
        raise ValueError(f"expected the raw consumption matrix, got {cons.provenance!r}")
    c_t = cons.grid.c_t
    for t in range(c_t):
        ledger.charge(f"kalman-t{t}", eps_tot / c_t, "sanitize", SEQUENTIAL)
    out = np.empty_like(cons.cells)
    for x in range(cons.grid.c_x):
        for y in range(cons.grid.c_y):
            out[x, y, :] = kalman_sanitize(cons.cells[x, y, :], eps_tot, sensitivity, rng)
    return ConsumptionMatrix(cons.grid, out, "sanitized")
