"""Leafwise dynamics: complex-time flows, the Poincare density estimate,
Brownian steps with holonomy transport, and the curvature probe.

The walker realizes leafwise Brownian motion in the flow coordinate of the
canonical chart (the one holding the largest lift coordinate); each step
draws dzeta = sqrt(dt)/sigma * (N1 + i N2) with sigma = |V|_FS / eta_hat and
splits the flow so every piece moves less than the ambient displacement cap.
Holonomy increments project the transported Jacobian onto the orthogonal
complement of the field and accumulate log-norm ratios, so intermediate
bookkeeping cancels exactly and only the endpoint metric enters. Inside
singular boxes the state lives in offset coordinates with a Taylor-shifted
field, keeping deep excursions at full relative precision.
"""

import logging
from dataclasses import dataclass, field as dc_field
from math import comb

import numpy as np

from . import _kernels as K
from .foliation import FoliationSpec, FoliationError
from .projective import ChartPoint, fs_distance

logger = logging.getLogger(__name__)

DISPLACEMENT_CAP = 0.05
SING_FRACTION = 0.25
FLOW_RTOL = 1e-10
PROBE_RTOL = 1e-6
STENCIL_RTOL = 1e-12
KAPPA_H_FRAC = 1e-3
GUARD_C = 2.0
ETA_BOUNDARY_POINTS = 64
PUBLIC_PROBE_ANGLES = 12
WALK_PROBE_ANGLES = 5


@dataclass(frozen=True)
class FlowSegmentResult:
    endpoint: ChartPoint
    jacobian: np.ndarray
    zeta_used: complex
    chart_switches: int
    steps: int


@dataclass(frozen=True)
class EtaEstimate:
    value: float
    method: str  # flow-disc | singular-box | model-sector
    trust: float


@dataclass
class LeafWalkerState:
    point: ChartPoint
    poincare_time: float
    log_holonomy: float
    normal_unit: np.ndarray
    rng: tuple  # (seed, stream, counter)
    flags: dict = dc_field(default_factory=dict)


class FlowError(RuntimeError):
    def __init__(self, status, msg):
        super().__init__(msg)
        self.status = status


@dataclass
class _Pack:
    """Array bundle handed to the kernels; cached on the FoliationSpec."""
    mode: int
    lam: complex
    coeffs: np.ndarray
    co_shift: np.ndarray
    sing_lifts: np.ndarray
    cos_floor: np.ndarray
    box_r: np.ndarray
    box_ca: np.ndarray
    sinv: np.ndarray
    sing_chart: np.ndarray
    sing_u: np.ndarray
    sing_v: np.ndarray


def model_field_coeffs(lam: complex) -> np.ndarray:
    """Chart-coefficient array for the linear model field (z, lam w)."""
    co = np.zeros((3, 2, 3, 3), dtype=np.complex128)
    co[0, 0, 1, 0] = 1.0
    co[0, 1, 0, 1] = lam
    return co


def model_pack(lam: complex) -> _Pack:
    if lam.imag <= 0:
        raise FoliationError("linear model requires Im(lambda) > 0")
    return _Pack(
        mode=1, lam=lam, coeffs=model_field_coeffs(lam),
        co_shift=np.zeros((0, 2, 3, 3), dtype=np.complex128),
        sing_lifts=np.zeros((0, 3), dtype=np.complex128),
        cos_floor=np.zeros(0), box_r=np.zeros(0), box_ca=np.zeros(0),
        sinv=np.zeros((0, 2, 2), dtype=np.complex128),
        sing_chart=np.zeros(0, dtype=np.int64),
        sing_u=np.zeros(0, dtype=np.complex128),
        sing_v=np.zeros(0, dtype=np.complex128))


def get_pack(spec) -> _Pack:
    if isinstance(spec, _Pack):
        return spec
    if spec._pack is None:
        spec._pack = _build_pack(spec)
    return spec._pack


def _shift_coeffs(c: np.ndarray, a: complex, b: complex) -> np.ndarray:
    """Coefficients of P(a + x, b + y) from those of P(u, v)."""
    D = c.shape[0]
    mu = np.zeros((D, D), dtype=np.complex128)
    mv = np.zeros((D, D), dtype=np.complex128)
    for i in range(D):
        for k in range(i + 1):
            mu[i, k] = comb(i, k) * a ** (i - k)
            mv[i, k] = comb(i, k) * b ** (i - k)
    return mu.T @ c @ mv


def _build_pack(spec: FoliationSpec) -> _Pack:
    sings = spec.singularities
    n = len(sings)
    D = spec.field.chart_coeffs.shape[2]
    lifts = np.zeros((n, 3), dtype=np.complex128)
    box_r = np.zeros(n)
    cosf = np.zeros(n)
    sinv = np.zeros((n, 2, 2), dtype=np.complex128)
    co_shift = np.zeros((n, 2, D, D), dtype=np.complex128)
    s_chart = np.zeros(n, dtype=np.int64)
    s_u = np.zeros(n, dtype=np.complex128)
    s_v = np.zeros(n, dtype=np.complex128)
    for j, s in enumerate(sings):
        lifts[j] = s.location.unit_lift()
        box_r[j] = s.box_radius
        # probe floor: rays fail only when essentially hitting the point
        cosf[j] = np.cos(s.box_radius / 50.0)
        s_chart[j] = s.location.chart
        s_u[j] = s.location.u
        s_v[j] = s.location.v
        for c in range(2):
            co_shift[j, c] = _shift_coeffs(
                spec.field.chart_coeffs[s.location.chart, c],
                complex(s.location.u), complex(s.location.v))
        jac = spec.field.jacobian(s.location)
        _, vecs = np.linalg.eig(jac)
        try:
            sinv[j] = np.linalg.inv(vecs)
        except np.linalg.LinAlgError:
            sinv[j] = np.eye(2)
    pack = _Pack(mode=0, lam=1j, coeffs=spec.field.chart_coeffs,
                 co_shift=co_shift, sing_lifts=lifts, cos_floor=cosf,
                 box_r=box_r, box_ca=np.ones(n), sinv=sinv,
                 sing_chart=s_chart, sing_u=s_u, sing_v=s_v)
    pack.box_ca = _match_box_eta(pack, sings)
    return pack


def _match_box_eta(pack: _Pack, sings) -> np.ndarray:
    """Continuity coefficients for the in-box eta formula c * s log*(s).

    Flow-disc estimates are averaged over points on each box boundary and
    divided by r log*(r)."""
    n = len(sings)
    ca = np.ones(n)
    for j, s in enumerate(sings):
        r = s.box_radius
        vals = []
        for t in range(ETA_BOUNDARY_POINTS):
            th = 2.0 * np.pi * t / ETA_BOUNDARY_POINTS
            ph = np.pi * ((t * 0.6180339887498949) % 1.0)
            du = r * np.cos(ph) * np.exp(1j * th)
            dv = r * np.sin(ph) * np.exp(1j * (th * 1.7 + 0.3))
            p = ChartPoint(s.location.chart, s.location.u + du,
                           s.location.v + dv)
            d = fs_distance(p, s.location)
            if d <= 0:
                continue
            scale = r / d
            p = ChartPoint(s.location.chart, s.location.u + du * scale,
                           s.location.v + dv * scale)
            est = _eta_ray_disc(pack, p, n_ang=WALK_PROBE_ANGLES)
            if est is not None and est.value > 0:
                vals.append(est.value)
        if vals:
            ca[j] = float(np.mean(vals) / (r * (1.0 + abs(np.log(r)))))
    return ca


def _field_norm(pack: _Pack, p: ChartPoint) -> float:
    u, v = complex(p.u), complex(p.v)
    pv, qv = K.eval_field(pack.coeffs[p.chart], u, v)
    return float(np.sqrt(K.norm2(pack.mode, u, v, pv, qv)))


def _eta_ray_disc(pack: _Pack, p: ChartPoint, n_ang, rho_cap=None):
    u, v = complex(p.u), complex(p.v)
    vn = _field_norm(pack, p)
    if vn <= 0:
        return None
    if rho_cap is None:
        rho_cap = K.PROBE_AMBIENT_CAP / vn
    lo, hi = K.eta_ray(pack.coeffs[p.chart], p.chart, u, v, rho_cap, n_ang,
                       pack.sing_lifts, pack.cos_floor, PROBE_RTOL)
    return EtaEstimate(float(lo * vn), "flow-disc", float(lo / hi))


def _eta_flow_disc(pack: _Pack, p: ChartPoint, n_ang, n_bisect, rho0=0.0):
    """Doubling-then-bisection certified flow-disc radius times |V|."""
    u, v = complex(p.u), complex(p.v)
    vn = _field_norm(pack, p)
    if vn <= 0:
        return None
    if rho0 <= 0.0:
        rho0 = 0.25 / vn
    lo, hi, _ = K.eta_probe(pack.coeffs[p.chart], p.chart, u, v, rho0, n_ang,
                            n_bisect, K.PROBE_GROW, pack.sing_lifts,
                            pack.cos_floor, PROBE_RTOL)
    return EtaEstimate(float(lo * vn), "flow-disc", float(lo / hi))


# ----------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------

def flow_segment(spec, p: ChartPoint, zeta: complex, tol: float = FLOW_RTOL,
                 threshold: float = 2.5, with_jac: bool = True
                 ) -> FlowSegmentResult:
    """Flow of dq/ds = zeta V(q), s in [0,1], with chart switching beyond
    `threshold` and the Jacobian conjugated through transitions.

    Raises FlowError on integrator step-underflow (shrink zeta and retry)
    or on leaving every chart's trust region.
    """
    pack = get_pack(spec)
    s_min, _ = K.nearest_sing(pack.mode, p.chart, complex(p.u), complex(p.v),
                              pack.sing_lifts)
    if s_min < 1e-8:
        raise FlowError(K.HIT_FLOOR, "start point too close to a singularity")
    st, k, u, v, j00, j01, j10, j11, nsw, nst = K.flow_switching(
        pack.coeffs, p.chart, complex(p.u), complex(p.v), complex(zeta),
        tol, 1e-13, with_jac, threshold, 200_000)
    if st == K.UNDERFLOW:
        raise FlowError(st, "step underflow near a singularity; shrink zeta")
    if st != K.OK:
        raise FlowError(st, f"flow failed with status {st}")
    jac = np.array([[j00, j01], [j10, j11]], dtype=np.complex128)
    return FlowSegmentResult(ChartPoint(k, u, v), jac, complex(zeta), nsw, nst)


def eta_estimate(spec, p: ChartPoint) -> EtaEstimate:
    """Poincare density estimate.

    Outside singular boxes: the largest certified flow-disc radius rho
    (doubling then bisection, PUBLIC_PROBE_ANGLES boundary samples) times
    |V|_FS. Inside a box of radius r: c_a s log*(s) with c_a matched from
    flow-disc values on the box boundary. In the linear-model pack: |V|
    times the distance from 0 to the admissible-time sector boundary.
    """
    pack = get_pack(spec)
    u, v = complex(p.u), complex(p.v)
    if pack.mode == 1:
        val = K.model_eta(pack.lam, u, v)
        if val <= 0:
            raise FoliationError("point outside the model bidisc")
        return EtaEstimate(float(val), "model-sector", 1.0)
    s_min, j_min = K.nearest_sing(0, p.chart, u, v, pack.sing_lifts)
    if j_min >= 0 and s_min < pack.box_r[j_min]:
        ls = 1.0 + abs(np.log(s_min))
        return EtaEstimate(float(pack.box_ca[j_min] * s_min * ls),
                           "singular-box", 1.0)
    est = _eta_flow_disc(pack, p, n_ang=PUBLIC_PROBE_ANGLES, n_bisect=5)
    if est is None:
        raise FoliationError("field vanishes at the probe point")
    return est


def unit_normal_at(spec, p: ChartPoint) -> np.ndarray:
    pack = get_pack(spec)
    u, v = complex(p.u), complex(p.v)
    n0, n1 = K.unit_normal(pack.mode, pack.coeffs[p.chart], u, v, u, v)
    return np.array([n0, n1], dtype=np.complex128)


def holonomy_increment(spec, segment: FlowSegmentResult, normal_unit):
    """Log-holonomy increment for a transported segment.

    n' = P_perp(endpoint) . J . n; the increment is the log norm ratio and
    the returned normal is renormalized. Raises on degenerate projection
    (the segment ran through a singularity).
    """
    pack = get_pack(spec)
    q = segment.endpoint
    n = np.asarray(normal_unit, dtype=np.complex128)
    w = segment.jacobian @ n
    qu, qv = complex(q.u), complex(q.v)
    r0, r1, wn = K.project_normal(pack.mode, pack.coeffs[q.chart],
                                  qu, qv, qu, qv,
                                  complex(w[0]), complex(w[1]))
    if wn < 1e-14:
        raise FlowError(K.HIT_FLOOR, "degenerate holonomy projection")
    inc = float(np.log(wn))
    return inc, np.array([r0 / wn, r1 / wn], dtype=np.complex128)


def walker_consts(dt, burn_in, sample_dt=0.25, bucket_len=10.0,
                  eta_scale=1.0, lam=1j, mode=0,
                  probe_angles=WALK_PROBE_ANGLES, probe_bisect=2):
    """(float-constants, int-constants) arrays for the kernels."""
    fc = np.zeros(K.NFC)
    fc[K.C_DT] = dt
    fc[K.C_DISP_CAP] = DISPLACEMENT_CAP
    fc[K.C_SING_FRAC] = SING_FRACTION
    fc[K.C_ETA_REFRESH] = 0.35
    fc[K.C_ETA_SCALE] = eta_scale
    fc[K.C_FLOW_RTOL] = FLOW_RTOL
    fc[K.C_PROBE_RTOL] = PROBE_RTOL
    fc[K.C_STENCIL_RTOL] = STENCIL_RTOL
    fc[K.C_KAPPA_HFRAC] = KAPPA_H_FRAC
    fc[K.C_GUARD_C] = GUARD_C
    fc[K.C_LAM_RE] = lam.real
    fc[K.C_LAM_IM] = lam.imag
    ic = np.zeros(K.NIC, dtype=np.int64)
    ic[K.I_BURN_STEP] = int(round(burn_in / dt))
    ic[K.I_SAMPLE_EVERY] = max(1, int(round(sample_dt / dt)))
    ic[K.I_BUCKET_STEPS] = max(1, int(round(bucket_len / dt)))
    ic[K.I_MODE] = mode
    ic[K.I_PROBE_ANGLES] = probe_angles
    ic[K.I_PROBE_BISECT] = probe_bisect
    return fc, ic


def bm_step(spec, state: LeafWalkerState, dt: float,
            gaussians=None, eta_scale: float = 1.0) -> LeafWalkerState:
    """One leafwise Brownian step through the shared kernel code path.

    `gaussians` overrides the counter-based draw (the zero-variance test
    passes (0, 0)); the rng counter advances either way.
    """
    pack = get_pack(spec)
    seed, stream, counter = state.rng
    if gaussians is None:
        g1, g2 = K.normal_pair(seed, stream, counter)
    else:
        g1, g2 = gaussians
    fc, ic = walker_consts(dt, burn_in=0.0, eta_scale=eta_scale,
                           lam=pack.lam, mode=pack.mode)
    flags = np.zeros(K.NFLAGS, dtype=np.int64)
    acc = np.zeros(K.NACC)
    acc[K.A_TRUST_MIN] = 1.0
    p = state.point
    n = np.asarray(state.normal_unit, dtype=np.complex128)
    st = K.step_once(
        pack.coeffs, pack.co_shift, pack.mode, pack.lam, pack.sing_lifts,
        pack.cos_floor, pack.box_r, pack.box_ca,
        pack.sing_chart, pack.sing_u, pack.sing_v,
        seed, stream, counter, float(g1), float(g2),
        p.chart, complex(p.u), complex(p.v), complex(n[0]), complex(n[1]),
        state.log_holonomy,
        0.0, 0, 0, 0j, 0j, 1.0,
        -1, 0.0, 0, 0.0j,
        flags, acc, fc, ic)
    code = st[0]
    if code != 0:
        raise FlowError(code, f"walker aborted with code {code}")
    in_box = st[13]
    if in_box >= 0:
        # public state stays in absolute chart coordinates
        point = ChartPoint(int(pack.sing_chart[in_box]),
                           complex(pack.sing_u[in_box]) + st[2],
                           complex(pack.sing_v[in_box]) + st[3])
    else:
        point = ChartPoint(st[1], st[2], st[3])
    flags_out = dict(state.flags)
    for key, idx in (("box_entries", K.F_BOX_ENTRIES),
                     ("guard_trips", K.F_GUARD),
                     ("substeps", K.F_SUBSTEPS)):
        flags_out[key] = flags_out.get(key, 0) + int(flags[idx])
    return LeafWalkerState(
        point=point,
        poincare_time=state.poincare_time + dt,
        log_holonomy=st[6],
        normal_unit=np.array([st[4], st[5]], dtype=np.complex128),
        rng=(seed, stream, counter + 1),
        flags=flags_out)


def make_walker(spec, p: ChartPoint, seed: int, stream: int = 0
                ) -> LeafWalkerState:
    n = unit_normal_at(spec, p)
    if not np.any(n):
        raise FoliationError("cannot build a normal frame at a singular point")
    return LeafWalkerState(point=p, poincare_time=0.0, log_holonomy=0.0,
                           normal_unit=n, rng=(seed, stream, 0))


def kappa_probe(spec, p: ChartPoint, h: float | None = None,
                eta: float | None = None) -> float:
    """Five-point curvature-density estimate at p.

    kappa = eta^2 / (2 |V|^2) * Laplacian_zeta[log-holonomy](0), stencil
    step h (default KAPPA_H_FRAC times the safe flow radius); the prefactor
    converts the Euclidean zeta-Laplacian to the leafwise Poincare one.
    """
    pack = get_pack(spec)
    u, v = complex(p.u), complex(p.v)
    s_min, j_min = K.nearest_sing(pack.mode, p.chart, u, v, pack.sing_lifts)
    if pack.mode == 0 and j_min >= 0 and s_min < 0.25 * pack.box_r[j_min]:
        raise FoliationError("probe point inside the box's inner quarter")
    if eta is None:
        eta = eta_estimate(spec, p).value
    co2 = pack.coeffs[p.chart]
    pv, qv = K.eval_field(co2, u, v)
    vn = float(np.sqrt(K.norm2(pack.mode, u, v, pv, qv)))
    h_frac = KAPPA_H_FRAC if h is None else h / (eta / vn)
    kap, status = K.kappa_stencil(pack.mode, co2, u, v, 0.0j, 0.0j,
                                  eta, vn, h_frac, STENCIL_RTOL)
    if status != 0:
        raise FlowError(status, "kappa stencil failed after shrinking h")
    return float(kap)
