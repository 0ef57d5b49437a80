"""Exact quantum evolution of the kicked rotator on the N-point torus.

Position grid r_j = 2 pi j / N, momentum index m = 0..N-1 (p = 2 pi m / N).
One period is U = exp(-i T m^2 / 2) exp(-i k0 cos r): kick in the position
basis, then free rotation in the momentum basis.  Basis changes use the
unitary FFT (norm="ortho") in both directions.

For even N the kinetic phases of m and m - N agree modulo 2 pi, so the
choice of index range 0..N-1 versus a symmetric one does not change U.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import BudgetExceededError
from .model import TWO_PI, PacketSpec, RotorParams

GAUSS_CUTOFF = 1e-18
DENSE_MAX_N = 256


def position_grid(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


def kinetic_phases(params: RotorParams) -> np.ndarray:
    # T m^2 / 2 = pi m^2 / N; reduce m^2 mod 2N first to keep the phase exact for large N
    m2 = np.mod(np.arange(params.N, dtype=np.int64) ** 2, 2 * params.N).astype(float)
    return np.exp(-1j * math.pi * m2 / params.N)


def kick_phases(params: RotorParams, k0_effective: float) -> np.ndarray:
    return np.exp(-1j * k0_effective * np.cos(position_grid(params.N)))


def prepare_gaussian(packet: PacketSpec, params: RotorParams) -> np.ndarray:
    """Periodized Gaussian packet on the position grid, unit norm.

    The plane-wave factor uses the integer momentum m0 = round(p0 N / 2pi) so
    that every image is exactly 2pi-periodic.
    """
    n = params.N
    r = position_grid(n)
    xi = packet.xi
    m0 = round(packet.p0_center * n / TWO_PI)
    cutoff = xi * math.sqrt(-2.0 * math.log(GAUSS_CUTOFF))
    r0 = packet.r0_center
    n_lo = math.floor((r0 - cutoff - TWO_PI) / TWO_PI)
    n_hi = math.ceil((r0 + cutoff) / TWO_PI)
    psi = np.zeros(n, dtype=complex)
    for image in range(n_lo, n_hi + 1):
        x = r + TWO_PI * image - r0
        if np.min(np.abs(x)) > cutoff:
            continue
        # exp(i m0 (r + 2 pi n)) = exp(i m0 r) for integer m0
        psi += np.exp(-(x**2) / (2.0 * xi**2))
    psi *= np.exp(1j * ((m0 * np.arange(n)) % n) * TWO_PI / n)
    return psi / np.linalg.norm(psi)


def to_momentum(psi: np.ndarray) -> np.ndarray:
    return sfft.fft(psi, norm="ortho", axis=-1)


def to_position(phi: np.ndarray) -> np.ndarray:
    return sfft.ifft(phi, norm="ortho", axis=-1)


def floquet_step(state: np.ndarray, params: RotorParams, k0_effective: float) -> np.ndarray:
    """One period of the split-operator Floquet map (returns a new array)."""
    phi = to_momentum(state * kick_phases(params, k0_effective))
    phi *= kinetic_phases(params)
    return to_position(phi)


class FloquetPropagator:
    """Reusable split-operator stepper for a stack of states.

    ``k0_values`` gives one kick amplitude per row; phase tables are built once.
    """

    def __init__(self, params: RotorParams, k0_values):
        self.params = params
        self.kick = np.stack([kick_phases(params, k) for k in np.atleast_1d(k0_values)])
        self.kin = kinetic_phases(params)

    def step(self, states: np.ndarray) -> np.ndarray:
        work = states * self.kick
        work = sfft.fft(work, norm="ortho", axis=-1, overwrite_x=True)
        work *= self.kin
        return sfft.ifft(work, norm="ortho", axis=-1, overwrite_x=True)


@dataclass(frozen=True)
class FidelitySeries:
    t: np.ndarray
    m_amp: np.ndarray
    m_sq: np.ndarray
    norm_drift: float = 0.0


def _normalized_overlaps(bra: np.ndarray, ket: np.ndarray) -> np.ndarray:
    """Row-wise <bra|ket> / (|bra| |ket|); dividing out the norms keeps
    roundoff drift of the propagated states out of M."""
    ov = np.einsum("ij,ij->i", bra.conj(), ket)
    nb = np.einsum("ij,ij->i", bra.conj(), bra).real
    nk = np.einsum("ij,ij->i", ket.conj(), ket).real
    return ov / np.sqrt(nb * nk)


def overlap_series(psi0: np.ndarray, params: RotorParams, k0_unperturbed: float, k0_perturbed: float,
                   t_max: int) -> FidelitySeries:
    prop = FloquetPropagator(params, [k0_unperturbed, k0_perturbed])
    states = np.stack([psi0, psi0]).astype(complex)
    m = np.empty(t_max + 1, dtype=complex)
    m[0] = _normalized_overlaps(states[1:], states[:1])[0]
    for t in range(1, t_max + 1):
        states = prop.step(states)
        m[t] = _normalized_overlaps(states[1:], states[:1])[0]
    drift = float(np.max(np.abs(np.linalg.norm(states, axis=1) - 1.0)))
    return FidelitySeries(t=np.arange(t_max + 1), m_amp=m, m_sq=np.abs(m) ** 2, norm_drift=drift)


def fidelity_series(packet: PacketSpec, params: RotorParams, t_max: int) -> FidelitySeries:
    """m(t) = <psi_pert(t)|psi_unpert(t)> with the perturbed kick amplitude k0 + sigma."""
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    psi0 = prepare_gaussian(packet, params)
    return overlap_series(psi0, params, params.k0, params.k0 + params.sigma, t_max)


def fidelity_batch(packets: list, params_list: list, t_max: int) -> list[FidelitySeries]:
    """Fidelity series for several (packet, params) pairs stepped together.

    All entries must share N; k0 and sigma may differ.  Results equal those of
    :func:`fidelity_series` run one at a time.
    """
    if len(packets) != len(params_list) or not packets:
        raise ValueError("need one params entry per packet")
    n_dims = {p.N for p in params_list}
    if len(n_dims) != 1:
        raise ValueError("all entries must share the Hilbert-space dimension N")
    n = len(packets)
    psi = np.stack([prepare_gaussian(pk, pr) for pk, pr in zip(packets, params_list)])
    k0s = [pr.k0 for pr in params_list] + [pr.k0 + pr.sigma for pr in params_list]
    prop = FloquetPropagator(params_list[0], k0s)
    states = np.concatenate([psi, psi])
    m = np.empty((t_max + 1, n), dtype=complex)
    m[0] = _normalized_overlaps(states[n:], states[:n])
    for t in range(1, t_max + 1):
        states = prop.step(states)
        m[t] = _normalized_overlaps(states[n:], states[:n])
    drift = np.abs(np.linalg.norm(states, axis=1) - 1.0)
    t = np.arange(t_max + 1)
    return [FidelitySeries(t=t, m_amp=m[:, j].copy(), m_sq=np.abs(m[:, j]) ** 2,
                           norm_drift=float(max(drift[j], drift[n + j]))) for j in range(n)]


def dense_floquet_oracle(params: RotorParams, k0_effective: float) -> np.ndarray:
    """Explicit N x N Floquet matrix in the position basis, built without FFTs."""
    n = params.N
    if n > DENSE_MAX_N:
        raise BudgetExceededError(
            f"dense Floquet matrix refused for N={n} > {DENSE_MAX_N}; use floquet_step")
    j = np.arange(n)
    # F[m, j] = <m|r_j> = exp(-2 pi i m j / N) / sqrt(N)
    F = np.exp(-2j * np.pi * np.outer(j, j) / n) / math.sqrt(n)
    m = np.arange(n)
    kin = np.exp(-1j * params.T * m.astype(float) ** 2 / 2.0)
    kick = np.exp(-1j * k0_effective * np.cos(position_grid(n)))
    return F.conj().T @ (kin[:, None] * F) * kick[None, :]
