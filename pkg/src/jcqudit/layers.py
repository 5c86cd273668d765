"""Closed-form unitaries of the primitive pulse layers.

Three primitives act on the qutrit-oscillator space:

* g-e and e-f transmon rotations, block diagonal in photon number n with
  3x3 blocks on {|g,n>, |e,n>, |f,n>};
* the sideband Jaynes-Cummings (JC) rotation, block diagonal in the doublets
  {|f,n>, |g,n+1>} with |e,n> and |g,0> only picking up phases.

Every layer is written as ``U = F(tau) expm(-i H tau)`` with ``H`` a
time-independent generator and ``F`` a diagonal frame factor (identity for the
transmon rotations, the chirped-carrier phase on |f> for JC layers).  Block
functions broadcast over leading array dimensions so the optimizer can
evaluate whole batches at once.

The JC pulse duration always closes the |f,d-1>-|g,d> doublet with an exact
2 pi rotation under the *calibration* parameters; passing different actual
parameters models miscalibration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .qsys import SpaceDescriptor, SystemParams

G, E, F = 0, 1, 2


class LayerKind(enum.Enum):
    GE = "GE"
    EF = "EF"
    COMPOSITE_GF = "CompositeGF"
    JC = "JC"


@dataclass(frozen=True)
class PulseErrors:
    """Pulse-level miscalibrations (all zero = ideal pulses).

    ge_detuning / sb_detuning shift the g-e and sideband drive frequencies
    (rad/us); tau_ge_offset / tau_sb_offset lengthen the g-e and sideband
    pulses (us).
    """

    ge_detuning: float = 0.0
    sb_detuning: float = 0.0
    tau_ge_offset: float = 0.0
    tau_sb_offset: float = 0.0


NO_ERRORS = PulseErrors()


# ---------------------------------------------------------------------------
# two-level closed forms
# ---------------------------------------------------------------------------


def pair_exp(m, h, c, tau):
    """exp(-i tau [[m+h, c], [c*, m-h]]) in closed form, shape (..., 2, 2)."""
    m, h, c, tau = np.broadcast_arrays(
        np.asarray(m, float), np.asarray(h, float), np.asarray(c, complex), np.asarray(tau, float)
    )
    om = np.sqrt(h * h + np.abs(c) ** 2)
    a = om * tau
    cos = np.cos(a)
    # sin(a)/om, finite as om -> 0
    sinc = tau * np.sinc(a / np.pi)
    ph = np.exp(-1j * m * tau)
    out = np.empty(m.shape + (2, 2), complex)
    out[..., 0, 0] = ph * (cos - 1j * h * sinc)
    out[..., 1, 1] = ph * (cos + 1j * h * sinc)
    out[..., 0, 1] = ph * (-1j * c * sinc)
    out[..., 1, 0] = ph * (-1j * np.conj(c) * sinc)
    return out


def pair_exp_deriv(m, h, c, tau, dm, dh, dc, dtau):
    """Directional derivative of :func:`pair_exp` along (dm, dh, dc, dtau)."""
    m, h, c, tau, dm, dh, dc, dtau = np.broadcast_arrays(
        *(np.asarray(x, float) for x in (m, h)),
        np.asarray(c, complex),
        *(np.asarray(x, float) for x in (tau, dm, dh)),
        np.asarray(dc, complex),
        np.asarray(dtau, float),
    )
    # exponent  mu*I + w.sigma  with w = tau*(Re c, -Im c, h)
    mu = m * tau
    dmu = dm * tau + m * dtau
    w = np.stack([tau * c.real, -tau * c.imag, tau * h], axis=-1)
    dw = np.stack(
        [dtau * c.real + tau * dc.real, -(dtau * c.imag + tau * dc.imag), dtau * h + tau * dh],
        axis=-1,
    )
    a = np.sqrt(np.sum(w * w, axis=-1))
    safe = np.where(a > 1e-12, a, 1.0)
    da = np.where(a > 1e-12, np.sum(w * dw, axis=-1) / safe, 0.0)
    sinc = np.sinc(a / np.pi)
    # d(sin a / a)/da, with its a -> 0 limit
    dsinc = np.where(a > 1e-6, (np.cos(a) - sinc) / safe, -a / 3.0)
    ph = np.exp(-1j * mu)
    # scalar and vector parts of the bracket and their derivatives
    s0 = np.cos(a)
    ds0 = -np.sin(a) * da
    v = sinc[..., None] * w
    dv = (dsinc * da)[..., None] * w + sinc[..., None] * dw
    out = np.empty(m.shape + (2, 2), complex)
    bracket = _su2(s0, v)
    dbracket = _su2(ds0, dv)
    out[...] = ph[..., None, None] * (dbracket - 1j * dmu[..., None, None] * bracket)
    return out


def _su2(s0, v):
    """s0*I - i v.sigma as (..., 2, 2)."""
    out = np.empty(s0.shape + (2, 2), complex)
    out[..., 0, 0] = s0 - 1j * v[..., 2]
    out[..., 1, 1] = s0 + 1j * v[..., 2]
    out[..., 0, 1] = -1j * (v[..., 0] - 1j * v[..., 1])
    out[..., 1, 0] = -1j * (v[..., 0] + 1j * v[..., 1])
    return out


# ---------------------------------------------------------------------------
# transmon rotations
# ---------------------------------------------------------------------------


def _check_finite(*xs):
    for x in xs:
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite layer parameter")


def _embed_pair(pair, i, j, k_phase):
    """Place a 2x2 block on levels (i, j) and a phase on the third level."""
    shape = pair.shape[:-2]
    out = np.zeros(shape + (3, 3), complex)
    out[..., i, i] = pair[..., 0, 0]
    out[..., i, j] = pair[..., 0, 1]
    out[..., j, i] = pair[..., 1, 0]
    out[..., j, j] = pair[..., 1, 1]
    k = 3 - i - j
    out[..., k, k] = k_phase
    return out


def ge_generator(n, phi, params: SystemParams, *, stark: bool | None = None, detuning: float = 0.0):
    """Diagonal energies (g, e, f) and g-e coupling of the g-e drive, per n-block.

    ``detuning`` is the drive-frame shift of |e> caused by a g-e drive
    frequency offset; the lab-frame unitary then carries the frame factor
    exp(+i detuning tau) on |e>.
    """
    n = np.asarray(n, float)
    stark = params.include_transmon_drive_stark if stark is None else stark
    eps = params.eps_ge
    e_energy = n * params.chi_e
    f_energy = n * params.chi_f
    if stark:
        alpha = params.anharmonicity
        if alpha == 0:
            raise ValueError("Stark-corrected rotation needs a nonzero anharmonicity")
        alpha_n = alpha + n * (params.chi_f - params.chi_e)
        e_energy = e_energy - 2.0 * eps**2 / alpha
        f_energy = f_energy + 2.0 * eps**2 / alpha_n
    coupling = eps * np.exp(1j * np.asarray(phi, float))
    return np.zeros_like(n), e_energy + detuning, f_energy, coupling


def ef_generator(n, phi, params: SystemParams, *, stark: bool | None = None):
    """Diagonal energies (g, e, f) and e-f coupling of the e-f drive, per n-block."""
    n = np.asarray(n, float)
    stark = params.include_transmon_drive_stark if stark is None else stark
    eps = params.eps_ef
    mean = n * (params.chi_e + params.chi_f) / 2.0
    half = n * (params.chi_f - params.chi_e) / 2.0
    g_energy = np.zeros_like(n)
    if stark:
        alpha = params.anharmonicity
        if alpha == 0:
            raise ValueError("Stark-corrected rotation needs a nonzero anharmonicity")
        g_energy = g_energy + eps**2 / (2.0 * alpha)
        mean = mean - eps**2 / alpha
        half = half - eps**2 / (2.0 * alpha)
    coupling = eps * np.exp(1j * np.asarray(phi, float))
    return g_energy, mean - half, mean + half, coupling


def _rotation_block(energies, coupling, pair, tau, frame_e=0.0):
    eg = energies
    i, j = pair
    k = 3 - i - j
    m = (eg[i] + eg[j]) / 2.0
    h = (eg[i] - eg[j]) / 2.0
    block = _embed_pair(pair_exp(m, h, coupling, tau), i, j, np.exp(-1j * eg[k] * tau))
    if frame_e:
        block[..., E, :] *= np.exp(1j * frame_e * np.asarray(tau))[..., None]
    return block


def r_ge_block(n, theta, phi, params: SystemParams, tau=None, *, stark=None, detuning=0.0):
    """3x3 block of a square g-e pulse on {|g,n>, |e,n>, |f,n>}.

    The default duration is tau = theta / (2 eps_ge). ``stark`` overrides
    ``params.include_transmon_drive_stark``.
    """
    _check_finite(n, theta, phi)
    if tau is None:
        tau = np.asarray(theta, float) / (2.0 * params.eps_ge)
    _check_finite(tau)
    eg, ee, ef, c = ge_generator(n, phi, params, stark=stark, detuning=detuning)
    eg, ee, ef, c, tau = np.broadcast_arrays(eg, ee, ef, c, np.asarray(tau, float))
    return _rotation_block((eg, ee, ef), c, (G, E), tau, frame_e=detuning)


def r_ef_block(n, theta, phi, params: SystemParams, tau=None, *, stark=None):
    """3x3 block of a square e-f pulse on {|g,n>, |e,n>, |f,n>}."""
    _check_finite(n, theta, phi)
    if tau is None:
        tau = np.asarray(theta, float) / (2.0 * params.eps_ef)
    _check_finite(tau)
    eg, ee, ef, c = ef_generator(n, phi, params, stark=stark)
    eg, ee, ef, c, tau = np.broadcast_arrays(eg, ee, ef, c, np.asarray(tau, float))
    return _rotation_block((eg, ee, ef), c, (E, F), tau)


def stark_corrected_r_ge(n, theta, phi, params: SystemParams, tau=None):
    """g-e block including the drive-induced Stark shifts of |e> and |f>."""
    return r_ge_block(n, theta, phi, params, tau, stark=True)


def stark_corrected_r_ef(n, theta, phi, params: SystemParams, tau=None):
    """e-f block including the drive-induced Stark shifts of |g>, |e>, |f>."""
    return r_ef_block(n, theta, phi, params, tau, stark=True)


def ge_block_derivs(n, theta, phi, params: SystemParams, errors: PulseErrors = NO_ERRORS):
    """g-e block and its derivatives with respect to theta and phi.

    Uses dU/dtau = -i (K_F + F H F^dag) U for U = F(tau) expm(-i H tau), and
    dU/dphi = i [K, U] with K = diag(1/2, -1/2, 0).
    """
    tau = np.asarray(theta, float) / (2.0 * params.eps_ge) + errors.tau_ge_offset
    det = errors.ge_detuning
    eg, ee, ef, c = ge_generator(n, phi, params, detuning=det)
    eg, ee, ef, c, tau = np.broadcast_arrays(eg, ee, ef, c, tau)
    U = _rotation_block((eg, ee, ef), c, (G, E), tau, frame_e=det)
    # F H F^dag: diagonal unchanged, g-e coupling rotated by the frame phase
    fr = np.exp(1j * det * tau)
    Hf = np.zeros(U.shape, complex)
    Hf[..., G, G] = eg
    Hf[..., E, E] = ee - det  # includes K_F = diag(0, -det, 0)
    Hf[..., F, F] = ef
    Hf[..., G, E] = c * np.conj(fr)
    Hf[..., E, G] = np.conj(c) * fr
    dU_dtheta = (-1j / (2.0 * params.eps_ge)) * (Hf @ U)
    K = np.array([0.5, -0.5, 0.0])
    dU_dphi = 1j * (K[:, None] * U - U * K[None, :])
    return U, dU_dtheta, dU_dphi


# ---------------------------------------------------------------------------
# composite g-f rotation
# ---------------------------------------------------------------------------


def composite_blocks(n, theta, phi, params: SystemParams, errors: PulseErrors = NO_ERRORS,
                     derivs: bool = False):
    """Per-n blocks of R(theta, phi) = R_ef(pi, 0) R_ge(theta, phi) R_ef(pi, pi).

    With ``derivs`` also returns the theta and phi derivatives.
    """
    ef_first = r_ef_block(n, math.pi, math.pi, params)
    ef_last = r_ef_block(n, math.pi, 0.0, params)
    if not derivs:
        tau = np.asarray(theta, float) / (2.0 * params.eps_ge) + errors.tau_ge_offset
        ge = r_ge_block(n, theta, phi, params, tau, detuning=errors.ge_detuning)
        return ef_last @ ge @ ef_first
    ge, dth, dph = ge_block_derivs(n, theta, phi, params, errors)
    return ef_last @ ge @ ef_first, ef_last @ dth @ ef_first, ef_last @ dph @ ef_first


def _assemble_rotation(blocks, space: SpaceDescriptor):
    N = space.n_levels
    U = np.zeros((space.dim, space.dim), complex)
    for n in range(N):
        idx = [q * N + n for q in range(3)]
        U[np.ix_(idx, idx)] = blocks[n]
    return U


def composite_gf_rotation(theta, phi, params: SystemParams, space: SpaceDescriptor,
                          errors: PulseErrors = NO_ERRORS):
    """Full-space unitary of the composite g-f rotation."""
    n = np.arange(space.n_levels)
    return _assemble_rotation(composite_blocks(n, theta, phi, params, errors), space)


def rotation_unitary(kind: LayerKind, theta, phi, params: SystemParams, space: SpaceDescriptor):
    """Full-space unitary of a single GE or EF pulse."""
    n = np.arange(space.n_levels)
    if kind is LayerKind.GE:
        blocks = r_ge_block(n, theta, phi, params)
    elif kind is LayerKind.EF:
        blocks = r_ef_block(n, theta, phi, params)
    else:
        raise ValueError(f"not a single transmon pulse: {kind}")
    return _assemble_rotation(blocks, space)


# ---------------------------------------------------------------------------
# JC sideband layer
# ---------------------------------------------------------------------------


FPGA_CLOCK_US = 0.002325


def pulse_rounding(tau, clock: float = FPGA_CLOCK_US):
    """Round a pulse length to the nearest integer multiple of the clock period."""
    if not clock > 0:
        raise ValueError("clock period must be positive")
    return np.round(np.asarray(tau, float) / clock) * clock


def jc_pulse_duration(delta, params: SystemParams, d: int):
    """Duration of a 2 pi rotation on the |f,d-1>-|g,d> doublet at detuning delta."""
    if d < 1:
        raise ValueError("cutoff dimension must be >= 1")
    delta = np.asarray(delta, float)
    return math.pi / np.sqrt((delta / 2.0) ** 2 + d * params.eps_sb**2)


def carrier_detuning(delta, params: SystemParams, d: int):
    """Sideband carrier offset from the undriven f0-g1 line for detuning delta."""
    return params.delta_f0g1 + (params.chi_f - params.kerr) * (d - 1) + np.asarray(delta, float)


def dynamical_phase(delta, tau, params: SystemParams, d: int):
    """Phase accumulated on |f> during a chirped JC pulse of length tau."""
    return carrier_detuning(delta, params, d) * np.asarray(tau, float)


@dataclass
class JCBlocks:
    """Structured JC layer on a space with N Fock levels.

    doublets[..., n] acts on (|f,n>, |g,n+1>) for n < d (frame included);
    when N = d the |g,d> partner is dropped and only doublets[..., d-1, 0, 0]
    acts on |f,d-1>. ``f_top`` is the phase on |f,d> when N = d + 1.
    ``e_phase[..., n]`` multiplies |e,n>; |g,0> is left untouched.
    """

    doublets: np.ndarray
    e_phase: np.ndarray
    f_top: np.ndarray | None
    tau: np.ndarray
    carrier: np.ndarray


def _jc_energies(n, carrier, params: SystemParams):
    """Mean and half-splitting of doublet n in the carrier frame, e-level energies."""
    dosc = params.osc_stark
    K = params.kerr
    delta_f = params.delta_f0g1 + dosc
    f_en = delta_f + params.chi_f * n + dosc * n + 0.5 * K * n * (n - 1) - carrier
    g_en = dosc * (n + 1) + 0.5 * K * (n + 1) * n
    e_en = params.delta_e_stark + params.chi_e * n + dosc * n + 0.5 * K * n * (n - 1)
    return (f_en + g_en) / 2.0, (f_en - g_en) / 2.0, f_en, e_en


def jc_blocks(phi_sb, delta, params: SystemParams, d: int, n_levels: int, *,
              calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS,
              derivs: bool = False):
    """Structured JC layer for (possibly batched) phi_sb, delta.

    Pulse duration and carrier follow ``calib`` (defaults to ``params``);
    the evolution itself follows ``params``. With ``derivs`` also returns the
    delta-derivative as a second :class:`JCBlocks` (the phi_sb derivative is
    the commutator i[K, U] with K = -|f><f| and needs no extra data).
    """
    calib = params if calib is None else calib
    phi_sb, delta = np.broadcast_arrays(np.asarray(phi_sb, float), np.asarray(delta, float))
    _check_finite(phi_sb, delta)
    om_c = np.sqrt((delta / 2.0) ** 2 + d * calib.eps_sb**2)
    tau = math.pi / om_c + errors.tau_sb_offset
    dtau = -(math.pi / om_c) * (delta / 4.0) / om_c**2
    carrier = carrier_detuning(delta, calib, d) + errors.sb_detuning

    bshape = delta.shape
    nd = np.arange(d, dtype=float)
    ex = (...,) + (None,)
    mean, half, _, _ = _jc_energies(nd, carrier[ex], params)
    coup = params.eps_sb * np.sqrt(nd + 1.0) * np.exp(-1j * phi_sb[ex])
    tau_b = np.broadcast_to(tau[ex], mean.shape)
    dbl = pair_exp(mean, half, coup, tau_b)
    frame = np.exp(-1j * carrier * tau)
    dbl[..., 0, :] *= frame[ex + (None,)]

    ne = np.arange(n_levels, dtype=float)
    _, _, _, e_en = _jc_energies(ne, carrier[ex], params)
    e_phase = np.exp(-1j * e_en * tau[ex])

    f_top = None
    if n_levels == d + 1:
        _, _, f_en_top, _ = _jc_energies(float(d), carrier, params)
        # bare |f,d> (partner outside the space) in the lab frame
        f_top = np.exp(-1j * (f_en_top + carrier) * tau)
    elif n_levels != d:
        raise ValueError("JC layer supports N = d or N = d + 1 Fock levels")

    blocks = JCBlocks(dbl, e_phase, f_top, tau, carrier)
    if not derivs:
        return blocks

    # d/d delta: dm = dh = -1/2 (carrier moves with delta), dtau from closure
    dtau_b = np.broadcast_to(dtau[ex], mean.shape)
    raw = pair_exp(mean, half, coup, tau_b)
    draw = pair_exp_deriv(mean, half, coup, tau_b, -0.5, -0.5, 0.0, dtau_b)
    dframe = -1j * (tau + carrier * dtau) * frame
    ddbl = draw.copy()
    ddbl[..., 0, :] = draw[..., 0, :] * frame[ex + (None,)] + raw[..., 0, :] * dframe[ex + (None,)]
    de_phase = -1j * e_en * dtau[ex] * e_phase
    df_top = None
    if f_top is not None:
        # f energy in the frame depends on delta through the carrier; lab phase does not
        df_top = -1j * (f_en_top + carrier) * dtau * f_top
    dblocks = JCBlocks(ddbl, de_phase, df_top, dtau, np.ones(bshape))
    return blocks, dblocks


def assemble_jc(blocks: JCBlocks, space: SpaceDescriptor) -> np.ndarray:
    """Dense matrix of an unbatched :class:`JCBlocks`."""
    N, d = space.n_levels, space.d
    U = np.zeros((space.dim, space.dim), complex)
    U[0, 0] = 1.0  # |g,0>
    for n in range(N):
        U[N + n, N + n] = blocks.e_phase[n]
    for n in range(d):
        fi = 2 * N + n
        if n + 1 < N:
            gi = n + 1
            U[np.ix_([fi, gi], [fi, gi])] = blocks.doublets[n]
        else:
            U[fi, fi] = blocks.doublets[n, 0, 0]
    if blocks.f_top is not None:
        U[2 * N + d, 2 * N + d] = blocks.f_top
    return U


def jc_unitary(phi_sb, delta, params: SystemParams, space: SpaceDescriptor, *,
               calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS):
    """Full-space unitary of a chirped JC layer JC(phi_sb, delta)."""
    b = jc_blocks(float(phi_sb), float(delta), params, space.d, space.n_levels,
                  calib=calib, errors=errors)
    return assemble_jc(b, space)


# ---------------------------------------------------------------------------
# generators (expm cross-check, Lindblad propagation)
# ---------------------------------------------------------------------------


def layer_hamiltonian(kind: LayerKind, layer_params: dict, params: SystemParams,
                      space: SpaceDescriptor, *, calib: SystemParams | None = None,
                      errors: PulseErrors = NO_ERRORS):
    """Generator H, frame diagonal and duration of a single pulse.

    Returns ``(H, frame, tau)`` such that ``diag(frame) @ expm(-1j * H * tau)``
    is the layer unitary. For GE/EF pulses ``layer_params`` holds ``theta`` and
    ``phi``; for JC pulses ``phi_sb`` and ``delta``. The composite rotation is
    three pulses and has no single generator; see :func:`composite_pulses`.

    On a space without the boundary level the closed cutoff doublet is
    represented by its effective |f,d-1> energy (exact for a 2 pi rotation).
    """
    N, dim, d = space.n_levels, space.dim, space.d
    H = np.zeros((dim, dim), complex)
    frame = np.ones(dim, complex)
    if kind in (LayerKind.GE, LayerKind.EF):
        theta, phi = layer_params["theta"], layer_params["phi"]
        n = np.arange(N, dtype=float)
        if kind is LayerKind.GE:
            eps = params.eps_ge
            det = errors.ge_detuning
            eg, ee, ef, c = ge_generator(n, phi, params, detuning=det)
            pair = (G, E)
            tau = theta / (2.0 * eps) + errors.tau_ge_offset
        else:
            eps = params.eps_ef
            det = 0.0
            eg, ee, ef, c = ef_generator(n, phi, params)
            pair = (E, F)
            tau = theta / (2.0 * eps)
        i, j = pair
        for k in range(N):
            idx = [q * N + k for q in range(3)]
            H[idx[0], idx[0]] = eg[k]
            H[idx[1], idx[1]] = ee[k]
            H[idx[2], idx[2]] = ef[k]
            H[idx[i], idx[j]] = c
            H[idx[j], idx[i]] = np.conj(c)
            if det:
                frame[idx[1]] = np.exp(1j * det * tau)
        return H, frame, float(tau)
    if kind is LayerKind.JC:
        calib = params if calib is None else calib
        phi_sb, delta = float(layer_params["phi_sb"]), float(layer_params["delta"])
        tau = float(jc_pulse_duration(delta, calib, d)) + errors.tau_sb_offset
        carrier = float(carrier_detuning(delta, calib, d)) + errors.sb_detuning
        for n in range(N):
            _, _, _, e_en = _jc_energies(float(n), carrier, params)
            H[N + n, N + n] = e_en
            frame[2 * N + n] = np.exp(-1j * carrier * tau)
        for n in range(d):
            mean, half, f_en, _ = _jc_energies(float(n), carrier, params)
            fi = 2 * N + n
            if n + 1 < N:
                gi = n + 1
                H[fi, fi] = mean + half
                H[gi, gi] = mean - half
                c = params.eps_sb * math.sqrt(n + 1) * np.exp(-1j * phi_sb)
                H[fi, gi] = c
                H[gi, fi] = np.conj(c)
            else:
                om = math.sqrt(half**2 + (n + 1) * params.eps_sb**2)
                H[fi, fi] = mean + om
        if N == d + 1:
            _, _, f_en, _ = _jc_energies(float(d), carrier, params)
            H[2 * N + d, 2 * N + d] = f_en
        return H, frame, tau
    raise ValueError(f"no single generator for layer kind {kind}")


def composite_pulses(theta, phi, params: SystemParams, space: SpaceDescriptor,
                     errors: PulseErrors = NO_ERRORS):
    """The three (H, frame, tau) pulses of the composite g-f rotation, in time order."""
    return [
        layer_hamiltonian(LayerKind.EF, {"theta": math.pi, "phi": math.pi}, params, space),
        layer_hamiltonian(LayerKind.GE, {"theta": theta, "phi": phi}, params, space, errors=errors),
        layer_hamiltonian(LayerKind.EF, {"theta": math.pi, "phi": 0.0}, params, space),
    ]
