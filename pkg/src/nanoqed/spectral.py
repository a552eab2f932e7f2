"""Spectral density matrices, thermal dressing, and bath correlators.

Converts the classical power matrices into the medium-assisted J_M, the
scattering-assisted J_S, and the total decay matrix Gamma:

    J_M = 2 P_abs / (pi hbar w),  J_S = 2 P_rad / (pi hbar w),
    Gamma = 4 P_em / (hbar w),    J_M + J_S = Gamma / (2 pi).

Thermal reservoirs at inverse temperatures (beta_M, beta_S) dress the
matrices onto the full frequency line, (1 + n_w) J(w) on w >= 0 and
n_|w| J*(|w|) on w < 0, and their sum is the effective spectral density
seen by a surrogate vacuum environment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .power import PowerMatrices

#: eigenvalues of a PSD matrix may undershoot zero by at most this fraction
#: of the matrix norm before the run is aborted
PSD_CLIP = 1e-10


class SpectralError(Exception):
    """Inconsistent grids, non-PSD inputs, or invalid temperatures."""


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def hermitian_asymmetry(a: np.ndarray) -> float:
    """Relative departure from Hermiticity, ||A - A^dag|| / ||A||."""
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(a - a.conj().T) / norm)


@dataclass(frozen=True)
class SpectralTable:
    """Frequency-resolved N x N spectral density matrices.

    J_M and J_S are Hermitian PSD (projected), Gamma is real symmetric.
    `asymmetry` logs the pre-projection Hermiticity violation per frequency
    as a mesh-quality metric.
    """

    omega: np.ndarray        # (nw,) ascending, > 0
    j_m: np.ndarray          # (nw, N, N) complex Hermitian
    j_s: np.ndarray          # (nw, N, N) complex Hermitian
    gamma: np.ndarray        # (nw, N, N) real symmetric
    j0: float                # normalization J0 = mu^2 wp^3 / (6 pi^2)
    mus: np.ndarray          # (N,) dipole magnitudes
    asymmetry: np.ndarray = field(default=None)  # (nw, 3) pre-projection metrics

    @property
    def n_emitters(self) -> int:
        return self.j_m.shape[1]

    def sum_rule_residual(self) -> np.ndarray:
        """Per-frequency ||J_M + J_S - Gamma/2pi|| / ||Gamma/2pi||."""
        target = self.gamma / (2 * np.pi)
        diff = self.j_m + self.j_s - target
        num = np.linalg.norm(diff, axis=(1, 2))
        den = np.linalg.norm(target, axis=(1, 2))
        return num / np.maximum(den, 1e-300)

    def min_eigenvalue_ratio(self) -> float:
        """min eig / ||J|| over both J matrices and all frequencies."""
        worst = 0.0
        for stack in (self.j_m, self.j_s):
            for a in stack:
                norm = np.linalg.norm(a)
                if norm == 0.0:
                    continue
                lo = float(np.linalg.eigvalsh(a).min())
                worst = min(worst, lo / norm)
        return worst


def spectral_from_powers(power_list, mus, j0: float) -> SpectralTable:
    """Build the spectral table from per-frequency power matrices.

    Matrices are Hermitian-projected before storage; the pre-projection
    asymmetry is kept as a diagnostic.  hbar = 1.
    """
    power_list = sorted(power_list, key=lambda p: p.omega)
    omega = np.array([p.omega for p in power_list])
    if np.any(omega <= 0):
        raise SpectralError("spectral grid requires omega > 0")
    if np.any(np.diff(omega) <= 0):
        raise SpectralError("duplicate frequencies in power list")
    n = power_list[0].p_em.shape[0]
    nw = len(power_list)
    j_m = np.empty((nw, n, n), np.complex128)
    j_s = np.empty((nw, n, n), np.complex128)
    gamma = np.empty((nw, n, n))
    asym = np.empty((nw, 3))
    for idx, pm in enumerate(power_list):
        w = pm.omega
        raw_m = 2.0 * pm.p_abs / (np.pi * w)
        raw_s = 2.0 * pm.p_rad / (np.pi * w)
        raw_g = 4.0 * pm.p_em / w
        asym[idx] = (hermitian_asymmetry(raw_m), hermitian_asymmetry(raw_s),
                     hermitian_asymmetry(raw_g.astype(np.complex128)))
        j_m[idx] = hermitian_part(raw_m)
        j_s[idx] = hermitian_part(raw_s)
        gamma[idx] = 0.5 * (raw_g + raw_g.T)
    return SpectralTable(omega=omega, j_m=j_m, j_s=j_s, gamma=gamma,
                         j0=float(j0), mus=np.asarray(mus, dtype=np.float64),
                         asymmetry=asym)


# ---------------------------------------------------------------------------
# Thermal weights and the effective spectral density
# ---------------------------------------------------------------------------

def thermal_weight(omega, beta) -> float | np.ndarray:
    """Bose-Einstein occupation n_w = 1/(exp(beta hbar w) - 1), hbar = 1.

    beta = inf (or numpy.inf) is the zero-temperature flag; the exponent is
    clamped at 700 to stay overflow-safe (returns 0 beyond).
    """
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0):
        raise SpectralError("thermal_weight requires omega > 0")
    if beta is None or beta == np.inf or (isinstance(beta, str) and beta == "inf"):
        return np.zeros_like(omega) if omega.ndim else 0.0
    beta = float(beta)
    if beta <= 0:
        raise SpectralError("inverse temperature must be positive (or inf)")
    x = beta * omega
    out = np.where(x > 700.0, 0.0, 1.0 / np.expm1(np.minimum(x, 700.0)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EffectiveSpectral:
    """Temperature-dressed effective spectral density on the full line.

    The grid holds the mirrored negative branch followed by the positive
    branch; `split` is the index of the first positive-branch point.
    J is Hermitian PSD at every grid frequency and continuous through 0.
    """

    omega: np.ndarray        # (2 nw,)
    j_eff: np.ndarray        # (2 nw, N, N)
    beta_m: float            # inverse temperatures (inf = zero temperature)
    beta_s: float
    split: int
    mus: np.ndarray

    @property
    def n_emitters(self) -> int:
        return self.j_eff.shape[1]

    def branches(self):
        """(omega, J) views of the negative and positive branches."""
        return ((self.omega[: self.split], self.j_eff[: self.split]),
                (self.omega[self.split:], self.j_eff[self.split:]))


def _parse_beta(beta) -> float:
    if beta is None or (isinstance(beta, str) and beta.lower() == "inf"):
        return np.inf
    beta = float(beta)
    if beta <= 0:
        raise SpectralError("inverse temperature must be positive (or inf)")
    return beta


def _dressed_branches(omega, j, beta):
    """(1+n) J on the positive branch, n J* mirrored on the negative one."""
    n_w = thermal_weight(omega, None if beta == np.inf else beta)
    n_w = np.asarray(n_w, dtype=np.float64)
    pos = (1.0 + n_w)[:, None, None] * j
    neg = n_w[::-1, None, None] * np.conj(j[::-1])
    return neg, pos


def temperature_dressed(table: SpectralTable, beta_m, beta_s) -> EffectiveSpectral:
    """Effective spectral density J_eff = J_M(w; beta_M) + J_S(w; beta_S)."""
    beta_m = _parse_beta(beta_m)
    beta_s = _parse_beta(beta_s)
    neg_m, pos_m = _dressed_branches(table.omega, table.j_m, beta_m)
    neg_s, pos_s = _dressed_branches(table.omega, table.j_s, beta_s)
    omega_full = np.concatenate([-table.omega[::-1], table.omega])
    j_full = np.concatenate([neg_m + neg_s, pos_m + pos_s], axis=0)
    return EffectiveSpectral(omega=omega_full, j_eff=j_full,
                             beta_m=beta_m, beta_s=beta_s,
                             split=len(table.omega), mus=table.mus)


def equal_temperature_reference(table: SpectralTable, beta) -> EffectiveSpectral:
    """J_eff built directly from Gamma for equal reservoir temperatures.

    On sum-rule-exact inputs this equals temperature_dressed(table, beta,
    beta): (1+n) Gamma/2pi on w >= 0 and n Gamma*/2pi mirrored below.  Gamma
    is real symmetric; the conjugate is kept for generality.
    """
    beta = _parse_beta(beta)
    g = table.gamma.astype(np.complex128) / (2 * np.pi)
    neg, pos = _dressed_branches(table.omega, g, beta)
    omega_full = np.concatenate([-table.omega[::-1], table.omega])
    return EffectiveSpectral(omega=omega_full, j_eff=np.concatenate([neg, pos]),
                             beta_m=beta, beta_s=beta,
                             split=len(table.omega), mus=table.mus)


def coupling_sqrt(j: np.ndarray, mus) -> np.ndarray:
    """Hermitian PSD square root G_eff = [P^-1 J P^-1]^(1/2), hbar = 1.

    Eigenvalues in [-PSD_CLIP * ||J||, 0) are floored to zero; anything
    lower signals an assembly or sum-rule failure and raises.
    """
    mus = np.asarray(mus, dtype=np.float64)
    j = np.asarray(j, dtype=np.complex128)
    scaled = j / np.outer(mus, mus)
    herm = hermitian_part(scaled)
    if not np.allclose(scaled, herm, atol=1e-12 * max(np.linalg.norm(scaled), 1e-300)):
        raise SpectralError("coupling_sqrt input is not Hermitian")
    vals, vecs = np.linalg.eigh(herm)
    norm = np.linalg.norm(herm)
    floor = -PSD_CLIP * max(norm, 1e-300)
    if np.any(vals < floor):
        raise SpectralError(
            f"spectral matrix has eigenvalue {vals.min():.3e} below the "
            f"clip threshold {floor:.3e}; sum rule or assembly failure")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


# ---------------------------------------------------------------------------
# Correlators
# ---------------------------------------------------------------------------

def correlator(eff: EffectiveSpectral, t, i: int, j: int,
               warn_horizon: bool = True):
    """Bath correlator C_ij(t) = (1/mu_i mu_j) Int J_eff,ij(w) e^{-iwt} dw.

    Trapezoid quadrature on the stored grid, each branch integrated
    separately.  Times beyond the resolvable horizon pi/dw only warn.
    """
    t = np.asarray(t, dtype=np.float64)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    steps = np.diff(eff.omega[: eff.split])
    if len(steps):
        horizon = np.pi / np.abs(steps).max()
        if warn_horizon and np.any(np.abs(t) > horizon):
            warnings.warn(
                f"correlator evaluated beyond the grid horizon {horizon:.3g}",
                stacklevel=2)
    out = np.zeros(len(t), np.complex128)
    for (w_br, j_br) in eff.branches():
        if len(w_br) < 2:
            continue
        vals = j_br[:, i, j]
        phases = np.exp(-1j * np.outer(t, w_br))
        out += np.trapezoid(phases * vals[None, :], w_br, axis=1)
    out /= eff.mus[i] * eff.mus[j]
    return complex(out[0]) if scalar else out
