"""Hot numerical kernels: complex-time flows, holonomy transport, walkers.

Everything here is numba-compiled and operates on plain arrays so that path
ensembles run in parallel with bit-reproducible results. The Python API
modules (`walker`, `estimators`) wrap these.

Conventions:
  * charts are cyclic: chart j has coordinates (u, v) = (x_{j+1}/x_j, x_{j+2}/x_j);
  * flow time is dq/ds = zeta * V(q), s in [0, 1];
  * mode 0 = projective plane with Fubini-Study metric, mode 1 = unit bidisc
    with the Euclidean metric (linear-model fixture);
  * inside a singular box the walker state switches to offset coordinates
    relative to the singularity, with the field Taylor-shifted there, so the
    deep excursions of leafwise Brownian motion keep full relative precision.
"""

import math

import numpy as np
from numba import njit, prange

U64 = np.uint64
TWO_PI = 6.283185307179586

# status codes returned by flow kernels
OK = 0
UNDERFLOW = 1
COORD_CAP = 2
HIT_FLOOR = 3
MAX_STEPS = 4

# walker abort codes
AB_SINGULARITY = 1
AB_INTEGRATOR = 2
AB_DEGENERATE = 3
AB_LEFT_DOMAIN = 4

# flags layout (per-path int64 counters)
F_GUARD = 0
F_BOX_ENTRIES = 1
F_REHOMES = 2
F_ETA_REFRESH = 3
F_SUBSTEPS = 4
F_KAPPA_SKIP = 5
F_ETA_SATURATED = 6
F_KAPPA_FAIL = 7
NFLAGS = 8

# accumulator layout (per-path float64 sums over post burn-in samples)
A_KAP_SUM = 0
A_KAP_N = 1
A_ETA2_SUM = 2
A_W_SUM = 3
A_LOGSTAR_SUM = 4
A_SAMP_N = 5
A_ETA_MAX = 6
A_TRUST_SUM = 7
A_TRUST_N = 8
A_TRUST_MIN = 9
NACC = 10

# per-bucket channels
B_KAP = 0
B_ETA2 = 1
B_W = 2
B_LOGSTAR = 3
B_N = 4
B_KAP_N = 5
NBCH = 6

# float-constant layout for run_paths
C_DT = 0
C_DISP_CAP = 1
C_SING_FRAC = 2
C_ETA_REFRESH = 3
C_ETA_SCALE = 4
C_FLOW_RTOL = 5
C_PROBE_RTOL = 6
C_STENCIL_RTOL = 7
C_KAPPA_HFRAC = 8
C_GUARD_C = 9
C_LAM_RE = 10
C_LAM_IM = 11
NFC = 12

# int-constant layout
I_BURN_STEP = 0
I_SAMPLE_EVERY = 1
I_BUCKET_STEPS = 2
I_MODE = 3
I_PROBE_ANGLES = 4
I_PROBE_BISECT = 5
NIC = 6

PROBE_COORD_CAP = 8.0
WALK_COORD_CAP = 50.0
PROBE_GROW = 1.5
PROBE_MAX_STEPS = 600
PROBE_AMBIENT_CAP = 3.0

# Dormand-Prince 5(4) tableau
_A21 = 1.0 / 5.0
_A31 = 3.0 / 40.0
_A32 = 9.0 / 40.0
_A41 = 44.0 / 45.0
_A42 = -56.0 / 15.0
_A43 = 32.0 / 9.0
_A51 = 19372.0 / 6561.0
_A52 = -25360.0 / 2187.0
_A53 = 64448.0 / 6561.0
_A54 = -212.0 / 729.0
_A61 = 9017.0 / 3168.0
_A62 = -355.0 / 33.0
_A63 = 46732.0 / 5247.0
_A64 = 49.0 / 176.0
_A65 = -5103.0 / 18656.0
_B1 = 35.0 / 384.0
_B3 = 500.0 / 1113.0
_B4 = 125.0 / 192.0
_B5 = -2187.0 / 6784.0
_B6 = 11.0 / 84.0
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0


# ----------------------------------------------------------------------
# counter-based RNG (scalar twin of folyap.rng)
# ----------------------------------------------------------------------

@njit(cache=True)
def _mix64(x):
    x = (x ^ (x >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> U64(27))) * U64(0x94D049BB133111EB)
    return x ^ (x >> U64(31))


@njit(cache=True)
def hash_u64(seed, stream, counter):
    x = _mix64(U64(seed) ^ U64(0x5851F42D4C957F2D))
    x = _mix64(x + U64(stream) * U64(0x9E3779B97F4A7C15))
    return _mix64(x + U64(counter) * U64(0x9E3779B97F4A7C15))


@njit(cache=True)
def normal_pair(seed, stream, counter):
    h1 = hash_u64(seed, stream, U64(counter) * U64(2))
    h2 = hash_u64(seed, stream, U64(counter) * U64(2) + U64(1))
    u1 = (np.float64(h1 >> U64(11)) + 1.0) * 1.1102230246251565e-16
    u2 = np.float64(h2 >> U64(11)) * 1.1102230246251565e-16
    r = math.sqrt(-2.0 * math.log(u1))
    th = TWO_PI * u2
    return r * math.cos(th), r * math.sin(th)


# ----------------------------------------------------------------------
# projective geometry
# ----------------------------------------------------------------------

@njit(cache=True)
def lift(chart, u, v):
    if chart == 0:
        return 1.0 + 0.0j, u, v
    elif chart == 1:
        return v, 1.0 + 0.0j, u
    else:
        return u, v, 1.0 + 0.0j


@njit(cache=True)
def convert_chart(chart, u, v, target):
    d = (target - chart) % 3
    if d == 0:
        return u, v
    elif d == 1:
        return v / u, 1.0 / u
    else:
        return 1.0 / v, u / v


@njit(cache=True)
def trans_deriv(chart, u, v, target):
    """Derivative of the chart-transition map at (u, v)."""
    d = (target - chart) % 3
    if d == 0:
        return 1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j
    elif d == 1:
        iu = 1.0 / u
        return -v * iu * iu, iu, -iu * iu, 0.0j
    else:
        iv = 1.0 / v
        return 0.0j, -iv * iv, iv, -u * iv * iv


@njit(cache=True)
def best_chart(chart, u, v):
    x0, x1, x2 = lift(chart, u, v)
    m0 = abs(x0)
    m1 = abs(x1)
    m2 = abs(x2)
    if m0 >= m1 and m0 >= m2:
        return 0
    elif m1 >= m2:
        return 1
    return 2


@njit(cache=True)
def fs_dist(ca, ua, va, cb, ub, vb):
    a0, a1, a2 = lift(ca, ua, va)
    b0, b1, b2 = lift(cb, ub, vb)
    na = math.sqrt(abs(a0) ** 2 + abs(a1) ** 2 + abs(a2) ** 2)
    nb = math.sqrt(abs(b0) ** 2 + abs(b1) ** 2 + abs(b2) ** 2)
    ip = a0 * b0.conjugate() + a1 * b1.conjugate() + a2 * b2.conjugate()
    c = abs(ip) / (na * nb)
    if c > 1.0:
        c = 1.0
    return math.acos(c)


@njit(cache=True)
def cos_to_lift(chart, u, v, b0, b1, b2):
    """|<p, b>| / |p| against a unit lift b; approaches 1 near b."""
    a0, a1, a2 = lift(chart, u, v)
    na = math.sqrt(abs(a0) ** 2 + abs(a1) ** 2 + abs(a2) ** 2)
    ip = a0 * b0.conjugate() + a1 * b1.conjugate() + a2 * b2.conjugate()
    return abs(ip) / na


@njit(cache=True)
def nearest_sing(mode, chart, u, v, sing_lifts):
    """Distance to the nearest singularity (FS on P^2, Euclidean in mode 1)."""
    if mode == 1:
        return math.sqrt(abs(u) ** 2 + abs(v) ** 2), 0
    best = 1.0e30
    jbest = -1
    for j in range(sing_lifts.shape[0]):
        c = cos_to_lift(chart, u, v, sing_lifts[j, 0], sing_lifts[j, 1],
                        sing_lifts[j, 2])
        if c > 1.0:
            c = 1.0
        d = math.acos(c)
        if d < best:
            best = d
            jbest = j
    return best, jbest


@njit(cache=True)
def inner(mode, u, v, a0, a1, b0, b1):
    """Hermitian inner product of tangent vectors at the chart point (u, v)."""
    if mode == 1:
        return a0 * b0.conjugate() + a1 * b1.conjugate()
    s = 1.0 + abs(u) ** 2 + abs(v) ** 2
    dot = a0 * b0.conjugate() + a1 * b1.conjugate()
    au = a0 * u.conjugate() + a1 * v.conjugate()
    bu = b0 * u.conjugate() + b1 * v.conjugate()
    return (s * dot - au * bu.conjugate()) / (s * s)


@njit(cache=True)
def norm2(mode, u, v, a0, a1):
    return inner(mode, u, v, a0, a1, a0, a1).real


# ----------------------------------------------------------------------
# polynomial field evaluation (dense Horner with partials)
# ----------------------------------------------------------------------

@njit(cache=True)
def _horner2(co, u, v):
    """Value, d/du, d/dv of one dense bivariate coefficient matrix."""
    D = co.shape[0]
    p = 0.0j
    pu = 0.0j
    pv = 0.0j
    for i in range(D - 1, -1, -1):
        b = co[i, D - 1]
        db = 0.0j
        for j in range(D - 2, -1, -1):
            db = db * v + b
            b = b * v + co[i, j]
        pu = pu * u + p
        pv = pv * u + db
        p = p * u + b
    return p, pu, pv


@njit(cache=True)
def eval_field(co2, u, v):
    """Field components from a (2, D, D) coefficient block."""
    p, _, _ = _horner2(co2[0], u, v)
    q, _, _ = _horner2(co2[1], u, v)
    return p, q


@njit(cache=True)
def eval_field_jac(co2, u, v):
    p, pu, pv = _horner2(co2[0], u, v)
    q, qu, qv = _horner2(co2[1], u, v)
    return p, q, pu, pv, qu, qv


# ----------------------------------------------------------------------
# Dormand-Prince 5(4) flow of dq/ds = zeta * V(q) in fixed coordinates
# ----------------------------------------------------------------------

@njit(cache=True)
def flow_chart(co2, chart, u0, v0, zeta, rtol, atol, with_jac,
               coord_cap, sing_lifts, cos_floor, check_sing,
               s0, j00_0, j01_0, j10_0, j11_0, max_steps):
    """Integrate from s=s0 to s=1; `chart` is used only by the singularity
    floor monitor. Returns (status, s_reached, u, v, j00, j01, j10, j11, n).
    """
    u = u0
    v = v0
    j00 = j00_0
    j01 = j01_0
    j10 = j10_0
    j11 = j11_0
    s = s0

    if zeta == 0.0:
        return OK, 1.0, u, v, j00, j01, j10, j11, 0

    p0, q0 = eval_field(co2, u, v)
    scale = abs(zeta) * (abs(p0) + abs(q0) + 1.0)
    h = 0.1 / (1.0 + scale)
    if h > 1.0 - s:
        h = 1.0 - s

    nsteps = 0
    nreject = 0
    while s < 1.0:
        if nsteps >= max_steps:
            return MAX_STEPS, s, u, v, j00, j01, j10, j11, nsteps
        if h < 1.0e-13:
            return UNDERFLOW, s, u, v, j00, j01, j10, j11, nsteps
        if s + h > 1.0:
            h = 1.0 - s

        t00 = 0.0j
        t01 = 0.0j
        t10 = 0.0j
        t11 = 0.0j
        k001 = 0.0j
        k011 = 0.0j
        k101 = 0.0j
        k111 = 0.0j
        k002 = 0.0j
        k012 = 0.0j
        k102 = 0.0j
        k112 = 0.0j
        k003 = 0.0j
        k013 = 0.0j
        k103 = 0.0j
        k113 = 0.0j
        k004 = 0.0j
        k014 = 0.0j
        k104 = 0.0j
        k114 = 0.0j
        k005 = 0.0j
        k015 = 0.0j
        k105 = 0.0j
        k115 = 0.0j
        k006 = 0.0j
        k016 = 0.0j
        k106 = 0.0j
        k116 = 0.0j
        k007 = 0.0j
        k017 = 0.0j
        k107 = 0.0j
        k117 = 0.0j

        p1, q1, a1, b1, c1, d1 = eval_field_jac(co2, u, v)
        ku1 = zeta * p1
        kv1 = zeta * q1
        if with_jac:
            k001 = zeta * (a1 * j00 + b1 * j10)
            k011 = zeta * (a1 * j01 + b1 * j11)
            k101 = zeta * (c1 * j00 + d1 * j10)
            k111 = zeta * (c1 * j01 + d1 * j11)

        uu = u + h * _A21 * ku1
        vv = v + h * _A21 * kv1
        if with_jac:
            t00 = j00 + h * _A21 * k001
            t01 = j01 + h * _A21 * k011
            t10 = j10 + h * _A21 * k101
            t11 = j11 + h * _A21 * k111
        p2, q2, a2, b2, c2, d2 = eval_field_jac(co2, uu, vv)
        ku2 = zeta * p2
        kv2 = zeta * q2
        if with_jac:
            k002 = zeta * (a2 * t00 + b2 * t10)
            k012 = zeta * (a2 * t01 + b2 * t11)
            k102 = zeta * (c2 * t00 + d2 * t10)
            k112 = zeta * (c2 * t01 + d2 * t11)

        uu = u + h * (_A31 * ku1 + _A32 * ku2)
        vv = v + h * (_A31 * kv1 + _A32 * kv2)
        if with_jac:
            t00 = j00 + h * (_A31 * k001 + _A32 * k002)
            t01 = j01 + h * (_A31 * k011 + _A32 * k012)
            t10 = j10 + h * (_A31 * k101 + _A32 * k102)
            t11 = j11 + h * (_A31 * k111 + _A32 * k112)
        p3, q3, a3, b3, c3, d3 = eval_field_jac(co2, uu, vv)
        ku3 = zeta * p3
        kv3 = zeta * q3
        if with_jac:
            k003 = zeta * (a3 * t00 + b3 * t10)
            k013 = zeta * (a3 * t01 + b3 * t11)
            k103 = zeta * (c3 * t00 + d3 * t10)
            k113 = zeta * (c3 * t01 + d3 * t11)

        uu = u + h * (_A41 * ku1 + _A42 * ku2 + _A43 * ku3)
        vv = v + h * (_A41 * kv1 + _A42 * kv2 + _A43 * kv3)
        if with_jac:
            t00 = j00 + h * (_A41 * k001 + _A42 * k002 + _A43 * k003)
            t01 = j01 + h * (_A41 * k011 + _A42 * k012 + _A43 * k013)
            t10 = j10 + h * (_A41 * k101 + _A42 * k102 + _A43 * k103)
            t11 = j11 + h * (_A41 * k111 + _A42 * k112 + _A43 * k113)
        p4, q4, a4, b4, c4, d4 = eval_field_jac(co2, uu, vv)
        ku4 = zeta * p4
        kv4 = zeta * q4
        if with_jac:
            k004 = zeta * (a4 * t00 + b4 * t10)
            k014 = zeta * (a4 * t01 + b4 * t11)
            k104 = zeta * (c4 * t00 + d4 * t10)
            k114 = zeta * (c4 * t01 + d4 * t11)

        uu = u + h * (_A51 * ku1 + _A52 * ku2 + _A53 * ku3 + _A54 * ku4)
        vv = v + h * (_A51 * kv1 + _A52 * kv2 + _A53 * kv3 + _A54 * kv4)
        if with_jac:
            t00 = j00 + h * (_A51 * k001 + _A52 * k002 + _A53 * k003 + _A54 * k004)
            t01 = j01 + h * (_A51 * k011 + _A52 * k012 + _A53 * k013 + _A54 * k014)
            t10 = j10 + h * (_A51 * k101 + _A52 * k102 + _A53 * k103 + _A54 * k104)
            t11 = j11 + h * (_A51 * k111 + _A52 * k112 + _A53 * k113 + _A54 * k114)
        p5, q5, a5, b5, c5, d5 = eval_field_jac(co2, uu, vv)
        ku5 = zeta * p5
        kv5 = zeta * q5
        if with_jac:
            k005 = zeta * (a5 * t00 + b5 * t10)
            k015 = zeta * (a5 * t01 + b5 * t11)
            k105 = zeta * (c5 * t00 + d5 * t10)
            k115 = zeta * (c5 * t01 + d5 * t11)

        uu = u + h * (_A61 * ku1 + _A62 * ku2 + _A63 * ku3 + _A64 * ku4 + _A65 * ku5)
        vv = v + h * (_A61 * kv1 + _A62 * kv2 + _A63 * kv3 + _A64 * kv4 + _A65 * kv5)
        if with_jac:
            t00 = j00 + h * (_A61 * k001 + _A62 * k002 + _A63 * k003 + _A64 * k004 + _A65 * k005)
            t01 = j01 + h * (_A61 * k011 + _A62 * k012 + _A63 * k013 + _A64 * k014 + _A65 * k015)
            t10 = j10 + h * (_A61 * k101 + _A62 * k102 + _A63 * k103 + _A64 * k104 + _A65 * k105)
            t11 = j11 + h * (_A61 * k111 + _A62 * k112 + _A63 * k113 + _A64 * k114 + _A65 * k115)
        p6, q6, a6, b6, c6, d6 = eval_field_jac(co2, uu, vv)
        ku6 = zeta * p6
        kv6 = zeta * q6
        if with_jac:
            k006 = zeta * (a6 * t00 + b6 * t10)
            k016 = zeta * (a6 * t01 + b6 * t11)
            k106 = zeta * (c6 * t00 + d6 * t10)
            k116 = zeta * (c6 * t01 + d6 * t11)

        un = u + h * (_B1 * ku1 + _B3 * ku3 + _B4 * ku4 + _B5 * ku5 + _B6 * ku6)
        vn = v + h * (_B1 * kv1 + _B3 * kv3 + _B4 * kv4 + _B5 * kv5 + _B6 * kv6)
        n00 = j00
        n01 = j01
        n10 = j10
        n11 = j11
        if with_jac:
            n00 = j00 + h * (_B1 * k001 + _B3 * k003 + _B4 * k004 + _B5 * k005 + _B6 * k006)
            n01 = j01 + h * (_B1 * k011 + _B3 * k013 + _B4 * k014 + _B5 * k015 + _B6 * k016)
            n10 = j10 + h * (_B1 * k101 + _B3 * k103 + _B4 * k104 + _B5 * k105 + _B6 * k106)
            n11 = j11 + h * (_B1 * k111 + _B3 * k113 + _B4 * k114 + _B5 * k115 + _B6 * k116)

        p7, q7, a7, b7, c7, d7 = eval_field_jac(co2, un, vn)
        ku7 = zeta * p7
        kv7 = zeta * q7
        if with_jac:
            k007 = zeta * (a7 * n00 + b7 * n10)
            k017 = zeta * (a7 * n01 + b7 * n11)
            k107 = zeta * (c7 * n00 + d7 * n10)
            k117 = zeta * (c7 * n01 + d7 * n11)

        eu = h * (_E1 * ku1 + _E3 * ku3 + _E4 * ku4 + _E5 * ku5 + _E6 * ku6 + _E7 * ku7)
        ev = h * (_E1 * kv1 + _E3 * kv3 + _E4 * kv4 + _E5 * kv5 + _E6 * kv6 + _E7 * kv7)
        scu = atol + rtol * max(abs(u), abs(un))
        scv = atol + rtol * max(abs(v), abs(vn))
        err = (abs(eu) / scu) ** 2 + (abs(ev) / scv) ** 2
        nerr = 2.0
        if with_jac:
            e00 = h * (_E1 * k001 + _E3 * k003 + _E4 * k004 + _E5 * k005 + _E6 * k006 + _E7 * k007)
            e01 = h * (_E1 * k011 + _E3 * k013 + _E4 * k014 + _E5 * k015 + _E6 * k016 + _E7 * k017)
            e10 = h * (_E1 * k101 + _E3 * k103 + _E4 * k104 + _E5 * k105 + _E6 * k106 + _E7 * k107)
            e11 = h * (_E1 * k111 + _E3 * k113 + _E4 * k114 + _E5 * k115 + _E6 * k116 + _E7 * k117)
            sc00 = atol + rtol * max(abs(j00), abs(n00))
            sc01 = atol + rtol * max(abs(j01), abs(n01))
            sc10 = atol + rtol * max(abs(j10), abs(n10))
            sc11 = atol + rtol * max(abs(j11), abs(n11))
            err += (abs(e00) / sc00) ** 2 + (abs(e01) / sc01) ** 2
            err += (abs(e10) / sc10) ** 2 + (abs(e11) / sc11) ** 2
            nerr = 6.0
        err = math.sqrt(err / nerr)

        nsteps += 1
        if err <= 1.0:
            s += h
            u = un
            v = vn
            if with_jac:
                j00 = n00
                j01 = n01
                j10 = n10
                j11 = n11
            if max(abs(u), abs(v)) > coord_cap:
                return COORD_CAP, s, u, v, j00, j01, j10, j11, nsteps
            if check_sing:
                for m in range(sing_lifts.shape[0]):
                    c = cos_to_lift(chart, u, v, sing_lifts[m, 0],
                                    sing_lifts[m, 1], sing_lifts[m, 2])
                    if c > cos_floor[m]:
                        return HIT_FLOOR, s, u, v, j00, j01, j10, j11, nsteps
            nreject = 0
            if err < 1.0e-10:
                fac = 5.0
            else:
                fac = 0.9 * err ** -0.2
                if fac > 5.0:
                    fac = 5.0
                if fac < 0.2:
                    fac = 0.2
            h *= fac
        else:
            nreject += 1
            fac = 0.9 * err ** -0.2
            if fac < 0.1:
                fac = 0.1
            h *= fac
            if nreject > 60:
                return UNDERFLOW, s, u, v, j00, j01, j10, j11, nsteps

    return OK, 1.0, u, v, j00, j01, j10, j11, nsteps


_NO_SINGS = np.zeros((0, 3), dtype=np.complex128)
_NO_COS = np.zeros(0, dtype=np.float64)


@njit(cache=True)
def flow_switching(co, chart0, u0, v0, zeta, rtol, atol, with_jac, threshold,
                   max_steps):
    """Public flow with chart switching at |coords| > threshold.

    Crossing a chart boundary hands the remaining s-interval to the new
    chart's polynomial field with the Jacobian conjugated by the transition
    derivative (the documented piecewise-field flow map).

    Returns (status, chart, u, v, j00, j01, j10, j11, n_switches, nsteps).
    """
    k = chart0
    u = u0
    v = v0
    j00 = 1.0 + 0.0j
    j01 = 0.0j
    j10 = 0.0j
    j11 = 1.0 + 0.0j
    s = 0.0
    nsw = 0
    ntot = 0
    while True:
        st, s, u, v, j00, j01, j10, j11, n = flow_chart(
            co[k], k, u, v, zeta, rtol, atol, with_jac, threshold,
            _NO_SINGS, _NO_COS, False, s, j00, j01, j10, j11, max_steps)
        ntot += n
        if st == COORD_CAP:
            kc = best_chart(k, u, v)
            if kc == k:
                return COORD_CAP, k, u, v, j00, j01, j10, j11, nsw, ntot
            t00, t01, t10, t11 = trans_deriv(k, u, v, kc)
            m00 = t00 * j00 + t01 * j10
            m01 = t00 * j01 + t01 * j11
            m10 = t10 * j00 + t11 * j10
            m11 = t10 * j01 + t11 * j11
            j00, j01, j10, j11 = m00, m01, m10, m11
            u, v = convert_chart(k, u, v, kc)
            k = kc
            nsw += 1
            if nsw > 100:
                return COORD_CAP, k, u, v, j00, j01, j10, j11, nsw, ntot
            continue
        return st, k, u, v, j00, j01, j10, j11, nsw, ntot


# ----------------------------------------------------------------------
# flow-disc eta probes
# ----------------------------------------------------------------------

@njit(cache=True)
def probe_ok(co2, chart, u, v, rho, n_ang, sing_lifts, cos_floor, rtol):
    """Whether the whole flow disc of radius rho is numerically certified.

    A boundary sample fails on integrator stall, on leaving the anchor
    chart's usable coordinate range, or on passing essentially through a
    singularity (the cos_floor guard).
    """
    for a in range(n_ang):
        th = TWO_PI * (a + 0.5) / n_ang
        zeta = rho * complex(math.cos(th), math.sin(th))
        st = flow_chart(co2, chart, u, v, zeta, rtol, 1.0e-9, False,
                        PROBE_COORD_CAP, sing_lifts, cos_floor, True,
                        0.0, 1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j,
                        PROBE_MAX_STEPS)[0]
        if st != OK:
            return False
    return True


@njit(cache=True)
def eta_ray(co2, chart, u, v, rho_cap, n_ang, sing_lifts, cos_floor, rtol):
    """Per-angle reach of the flow disc measured along radial rays.

    Each ray integrates zeta = rho_cap e^{i theta} once and records the
    fraction reached at failure, so one flow per angle replaces the
    candidate search. Returns (min_reach, max_reach) over the angles.
    """
    best = rho_cap
    worst = 0.0
    for a in range(n_ang):
        th = TWO_PI * (a + 0.5) / n_ang
        zeta = rho_cap * complex(math.cos(th), math.sin(th))
        st, s, _, _, _, _, _, _, _ = flow_chart(
            co2, chart, u, v, zeta, rtol, 1.0e-9, False,
            PROBE_COORD_CAP, sing_lifts, cos_floor, True,
            0.0, 1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j, PROBE_MAX_STEPS)
        r = rho_cap if st == OK else s * rho_cap
        if r < best:
            best = r
        if r > worst:
            worst = r
    if worst <= 0.0:
        worst = 1.0e-12
    if best <= 0.0:
        best = 1.0e-12
    return best, worst


@njit(cache=True)
def eta_probe(co2, chart, u, v, rho0, n_ang, n_bisect, grow,
              sing_lifts, cos_floor, rtol):
    """Largest certified flow-disc radius via growth then bisection.

    Returns (rho_lo, rho_hi, saturated); rho_lo is the certified radius.
    """
    saturated = 0
    if rho0 <= 0.0:
        rho0 = 1.0e-4
    if probe_ok(co2, chart, u, v, rho0, n_ang, sing_lifts, cos_floor, rtol):
        lo = rho0
        hi = rho0
        found = False
        for _ in range(14):
            hi = lo * grow
            if probe_ok(co2, chart, u, v, hi, n_ang, sing_lifts, cos_floor,
                        rtol):
                lo = hi
            else:
                found = True
                break
        if not found:
            saturated = 1
            return lo, lo * grow, saturated
    else:
        hi = rho0
        lo = 0.0
        for _ in range(40):
            cand = hi * 0.55
            if cand < 1.0e-9:
                return 1.0e-9, hi, saturated
            if probe_ok(co2, chart, u, v, cand, n_ang, sing_lifts, cos_floor,
                        rtol):
                lo = cand
                break
            hi = cand
        if lo == 0.0:
            return 1.0e-9, hi, saturated
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if probe_ok(co2, chart, u, v, mid, n_ang, sing_lifts, cos_floor,
                    rtol):
            lo = mid
        else:
            hi = mid
    return lo, hi, saturated


# ----------------------------------------------------------------------
# holonomy helpers
# ----------------------------------------------------------------------

@njit(cache=True)
def unit_normal(mode, co2, fu, fv, mu, mv):
    """Metric-unit normal to the field direction; field coordinates (fu, fv)
    may be box offsets while (mu, mv) is the ambient metric point."""
    p, q = eval_field(co2, fu, fv)
    w0 = -q.conjugate()
    w1 = p.conjugate()
    vn2 = norm2(mode, mu, mv, p, q)
    if vn2 <= 0.0:
        return 0.0j, 0.0j
    c = inner(mode, mu, mv, w0, w1, p, q) / vn2
    w0 -= c * p
    w1 -= c * q
    wn = math.sqrt(norm2(mode, mu, mv, w0, w1))
    if wn < 1.0e-300:
        return 0.0j, 0.0j
    return w0 / wn, w1 / wn


@njit(cache=True)
def project_normal(mode, co2, fu, fv, mu, mv, w0, w1):
    """Component of w orthogonal to the field, plus its norm."""
    p, q = eval_field(co2, fu, fv)
    vn2 = norm2(mode, mu, mv, p, q)
    c = inner(mode, mu, mv, w0, w1, p, q) / vn2
    r0 = w0 - c * p
    r1 = w1 - c * q
    return r0, r1, math.sqrt(norm2(mode, mu, mv, r0, r1))


@njit(cache=True)
def kappa_stencil(mode, co2, fu, fv, bu, bv, eta_h, vnorm, h_frac, rtol):
    """Five-point curvature-density estimate.

    kappa = eta^2/(2 |V|^2) * [sum of log-holonomy over +-h, +-ih] / h^2;
    the center term vanishes by the cocycle normalization. (bu, bv) is the
    coordinate base: metric points are (bu + x, bv + y) for field points
    (x, y) (zero base in global charts, the singularity in box offsets).
    Returns (kappa, status).
    """
    rho_safe = eta_h / vnorm
    h = h_frac * rho_safe
    n0u, n0v = unit_normal(mode, co2, fu, fv, bu + fu, bv + fv)
    if n0u == 0.0 and n0v == 0.0:
        return 0.0, 1
    for _ in range(5):
        tot = 0.0
        ok = True
        for qdir in range(4):
            if qdir == 0:
                zeta = complex(h, 0.0)
            elif qdir == 1:
                zeta = complex(-h, 0.0)
            elif qdir == 2:
                zeta = complex(0.0, h)
            else:
                zeta = complex(0.0, -h)
            st, _, uu, vv, j00, j01, j10, j11, _ = flow_chart(
                co2, 0, fu, fv, zeta, rtol, 1.0e-14, True, WALK_COORD_CAP,
                _NO_SINGS, _NO_COS, False, 0.0,
                1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j, 4000)
            if st != OK:
                ok = False
                break
            w0 = j00 * n0u + j01 * n0v
            w1 = j10 * n0u + j11 * n0v
            _, _, wn = project_normal(mode, co2, uu, vv, bu + uu, bv + vv,
                                      w0, w1)
            if wn < 1.0e-300:
                ok = False
                break
            tot += math.log(wn)
        if ok:
            lap = tot / (h * h)
            return eta_h * eta_h / (2.0 * vnorm * vnorm) * lap, 0
        h *= 0.5
    return 0.0, 1


# ----------------------------------------------------------------------
# walker step and path runner
# ----------------------------------------------------------------------

@njit(cache=True)
def model_eta(lam, u, v):
    """Sector-distance eta for the linear model: |V| * dist(0, bd Pi_x)."""
    au = abs(u)
    av = abs(v)
    la = abs(lam)
    vn = math.sqrt(au * au + la * la * av * av)
    if au >= 1.0 or av >= 1.0:
        return 0.0
    if au <= 0.0:
        rho = -math.log(av) / la
    elif av <= 0.0:
        rho = -math.log(au)
    else:
        rho = min(-math.log(au), -math.log(av) / la)
    return vn * rho


@njit(cache=True)
def step_once(co, co_shift, mode, lam, sing_lifts, cos_floor, box_r, box_ca,
              sing_chart, sing_u, sing_v,
              seed, path_id, step, g1, g2,
              chart, u, v, n0, n1, logh,
              eta_rho, anch_ok, anch_c, anch_u, anch_v, anch_vn,
              in_box, box_entry_s, box_entry_step, box_zeta,
              flags, acc, fc, ic):
    """One leafwise Brownian step; returns the updated state tuple.

    While in_box >= 0 the coordinates (u, v) are offsets from that
    singularity in its own chart and the Taylor-shifted field co_shift is
    integrated, so arbitrarily deep excursions retain relative precision.
    Gaussians are passed in so ensembles and the single-step API share this
    exact code path. First element is 0 on success, else an abort code.
    """
    dt = fc[C_DT]
    eta_scale = fc[C_ETA_SCALE]

    if mode == 0:
        if in_box >= 0:
            j = in_box
            s_min = math.sqrt(norm2(0, sing_u[j], sing_v[j], u, v))
            if s_min > box_r[j]:
                # leave the box: back to absolute chart coordinates
                u = sing_u[j] + u
                v = sing_v[j] + v
                chart = sing_chart[j]
                in_box = -1
        if in_box < 0:
            kc = best_chart(chart, u, v)
            if kc != chart:
                t00, t01, t10, t11 = trans_deriv(chart, u, v, kc)
                m0 = t00 * n0 + t01 * n1
                m1 = t10 * n0 + t11 * n1
                u, v = convert_chart(chart, u, v, kc)
                chart = kc
                n0, n1 = m0, m1
                flags[F_REHOMES] += 1
            s_min, j_min = nearest_sing(0, chart, u, v, sing_lifts)
            if j_min >= 0 and s_min < box_r[j_min]:
                # enter the box: offsets in the singularity's own chart
                j = j_min
                kb = sing_chart[j]
                if kb != chart:
                    t00, t01, t10, t11 = trans_deriv(chart, u, v, kb)
                    m0 = t00 * n0 + t01 * n1
                    m1 = t10 * n0 + t11 * n1
                    u, v = convert_chart(chart, u, v, kb)
                    chart = kb
                    n0, n1 = m0, m1
                u = u - sing_u[j]
                v = v - sing_v[j]
                in_box = j
                flags[F_BOX_ENTRIES] += 1
                box_entry_s = s_min
                box_entry_step = step
                box_zeta = 0.0j
    else:
        if abs(u) >= 1.0 or abs(v) >= 1.0:
            return (AB_LEFT_DOMAIN, chart, u, v, n0, n1, logh, eta_rho,
                    anch_ok, anch_c, anch_u, anch_v, anch_vn, in_box,
                    box_entry_s, box_entry_step, box_zeta, 0.0, 0.0)
        s_min = math.sqrt(abs(u) ** 2 + abs(v) ** 2)

    # coordinate base: metric points are (bu + x, bv + y)
    if mode == 0 and in_box >= 0:
        j = in_box
        bu = sing_u[j]
        bv = sing_v[j]
        co2 = co_shift[j]
        s_min = math.sqrt(norm2(0, bu, bv, u, v))
    else:
        bu = 0.0j
        bv = 0.0j
        co2 = co[chart]
        if mode == 0:
            s_min, _ = nearest_sing(0, chart, u, v, sing_lifts)

    if s_min < 1.0e-250:
        return (AB_SINGULARITY, chart, u, v, n0, n1, logh, eta_rho, anch_ok,
                anch_c, anch_u, anch_v, anch_vn, in_box, box_entry_s,
                box_entry_step, box_zeta, 0.0, 0.0)

    # keep the transported normal a metric unit vector
    nn = math.sqrt(norm2(mode, bu + u, bv + v, n0, n1))
    if nn < 1.0e-300:
        return (AB_DEGENERATE, chart, u, v, n0, n1, logh, eta_rho, anch_ok,
                anch_c, anch_u, anch_v, anch_vn, in_box, box_entry_s,
                box_entry_step, box_zeta, 0.0, 0.0)
    n0 /= nn
    n1 /= nn

    p, q = eval_field(co2, u, v)
    vn = math.sqrt(norm2(mode, bu + u, bv + v, p, q))

    # eta estimate: closed form inside boxes / in the model, ray probe with
    # a cached anchor elsewhere
    if mode == 1:
        eta_h = model_eta(lam, u, v) * eta_scale
        if eta_h <= 0.0:
            return (AB_LEFT_DOMAIN, chart, u, v, n0, n1, logh, eta_rho,
                    anch_ok, anch_c, anch_u, anch_v, anch_vn, in_box,
                    box_entry_s, box_entry_step, box_zeta, 0.0, 0.0)
    elif in_box >= 0:
        ls = 1.0 + abs(math.log(s_min))
        eta_h = box_ca[in_box] * s_min * ls * eta_scale
    else:
        need = anch_ok == 0
        if not need:
            # the probe radius varies on the scale of its own ambient size
            thr = 0.35 * eta_rho * anch_vn
            if thr < 0.02:
                thr = 0.02
            if thr > 0.3:
                thr = 0.3
            if fs_dist(chart, u, v, anch_c, anch_u, anch_v) > thr:
                need = True
            else:
                ratio = vn / anch_vn
                if ratio > 1.6 or ratio < 0.6:
                    need = True
        if need:
            rho_cap = PROBE_AMBIENT_CAP / vn
            if anch_ok == 1 and eta_rho > 0.0:
                warm = 2.5 * eta_rho
                if warm < rho_cap:
                    rho_cap = warm
            lo, hi = eta_ray(co2, chart, u, v, rho_cap, ic[I_PROBE_ANGLES],
                             sing_lifts, cos_floor, fc[C_PROBE_RTOL])
            if lo >= 0.999 * rho_cap:
                flags[F_ETA_SATURATED] += 1
            eta_rho = lo
            anch_ok = 1
            anch_c = chart
            anch_u = u
            anch_v = v
            anch_vn = vn
            flags[F_ETA_REFRESH] += 1
            trust = lo / hi
            acc[A_TRUST_SUM] += trust
            acc[A_TRUST_N] += 1.0
            if trust < acc[A_TRUST_MIN]:
                acc[A_TRUST_MIN] = trust
        eta_h = eta_rho * vn * eta_scale

    if eta_h > acc[A_ETA_MAX]:
        acc[A_ETA_MAX] = eta_h

    sigma = vn / eta_h
    dz = math.sqrt(dt) / sigma * complex(g1, g2)

    # sub-split so each flow piece moves less than the displacement cap
    rem = dz
    guard_c = fc[C_GUARD_C]
    nhalf = 0
    shrink = 1.0
    while abs(rem) > 0.0:
        cap = fc[C_DISP_CAP]
        lim = fc[C_SING_FRAC] * s_min
        if lim < cap:
            cap = lim
        cap *= shrink
        plen = cap / (vn + 1.0e-300)
        if plen >= abs(rem):
            part = rem
        else:
            part = rem * (plen / abs(rem))
        st, _, uu, vv, j00, j01, j10, j11, _ = flow_chart(
            co2, chart, u, v, part, fc[C_FLOW_RTOL], 1.0e-13, True,
            WALK_COORD_CAP, sing_lifts, cos_floor, False, 0.0,
            1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j, 4000)
        if st != OK:
            nhalf += 1
            if nhalf > 20:
                return (AB_INTEGRATOR, chart, u, v, n0, n1, logh, eta_rho,
                        anch_ok, anch_c, anch_u, anch_v, anch_vn, in_box,
                        box_entry_s, box_entry_step, box_zeta, 0.0, 0.0)
            shrink *= 0.5
            continue
        shrink = min(1.0, shrink * 2.0)
        w0 = j00 * n0 + j01 * n1
        w1 = j10 * n0 + j11 * n1
        r0, r1, wn = project_normal(mode, co2, uu, vv, bu + uu, bv + vv,
                                    w0, w1)
        if wn < 1.0e-300:
            return (AB_DEGENERATE, chart, u, v, n0, n1, logh, eta_rho,
                    anch_ok, anch_c, anch_u, anch_v, anch_vn, in_box,
                    box_entry_s, box_entry_step, box_zeta, 0.0, 0.0)
        logh += math.log(wn)
        n0 = r0 / wn
        n1 = r1 / wn
        u = uu
        v = vv
        rem -= part
        flags[F_SUBSTEPS] += 1
        p, q = eval_field(co2, u, v)
        vn = math.sqrt(norm2(mode, bu + u, bv + v, p, q))
        if mode == 1:
            s_min = math.sqrt(abs(u) ** 2 + abs(v) ** 2)
        elif in_box >= 0:
            s_min = math.sqrt(norm2(0, bu, bv, u, v))
        else:
            s_min, _ = nearest_sing(0, chart, u, v, sing_lifts)
        if s_min < 1.0e-250:
            return (AB_SINGULARITY, chart, u, v, n0, n1, logh, eta_rho,
                    anch_ok, anch_c, anch_u, anch_v, anch_vn, in_box,
                    box_entry_s, box_entry_step, box_zeta, 0.0, 0.0)
        if in_box >= 0 or mode == 1:
            box_zeta += part
            # stepping safeguard: the net complex time reached must stay
            # below exp(c*R) * log*(entry distance); violations are flagged
            # and the excursion origin re-anchored
            R = (step - box_entry_step + 1) * dt
            entry_ls = 1.0 + abs(math.log(box_entry_s + 1.0e-300))
            if abs(box_zeta) > math.exp(guard_c * R) * entry_ls:
                flags[F_GUARD] += 1
                box_zeta = 0.0j
                box_entry_s = s_min
                box_entry_step = step

    return (0, chart, u, v, n0, n1, logh, eta_rho, anch_ok, anch_c, anch_u,
            anch_v, anch_vn, in_box, box_entry_s, box_entry_step, box_zeta,
            eta_h, s_min)


@njit(cache=True)
def sample_channels(co, co_shift, mode, lam, sing_lifts, box_r, box_ca,
                    sinv, sing_u, sing_v,
                    chart, u, v, eta_h, s_min, in_box,
                    flags, acc, buck, bucket, fc):
    if mode == 0 and in_box >= 0:
        j = in_box
        co2 = co_shift[j]
        bu = sing_u[j]
        bv = sing_v[j]
    else:
        co2 = co[chart]
        bu = 0.0j
        bv = 0.0j
    p, q = eval_field(co2, u, v)
    vnorm = math.sqrt(norm2(mode, bu + u, bv + v, p, q))

    ls = 1.0 + abs(math.log(s_min + 1.0e-300))
    if mode == 1:
        zz = abs(u) ** 2
        ww = abs(v) ** 2
        rho_bal = zz * ww / ((zz + ww) ** 2 + 1.0e-300)
        wgt = ls + rho_bal * ls * ls
    elif in_box >= 0:
        j = in_box
        x0 = sinv[j, 0, 0] * u + sinv[j, 0, 1] * v
        x1 = sinv[j, 1, 0] * u + sinv[j, 1, 1] * v
        zz = abs(x0) ** 2
        ww = abs(x1) ** 2
        rho_bal = zz * ww / ((zz + ww) ** 2 + 1.0e-300)
        s_rel = s_min / box_r[j]
        if s_rel > 1.0:
            s_rel = 1.0
        lsr = 1.0 + abs(math.log(s_rel + 1.0e-300))
        wgt = lsr + rho_bal * lsr * lsr
    else:
        wgt = 1.0

    acc[A_ETA2_SUM] += eta_h * eta_h
    acc[A_W_SUM] += wgt
    acc[A_LOGSTAR_SUM] += ls
    acc[A_SAMP_N] += 1.0
    buck[bucket, B_ETA2] += eta_h * eta_h
    buck[bucket, B_W] += wgt
    buck[bucket, B_LOGSTAR] += ls
    buck[bucket, B_N] += 1.0

    skip = False
    if mode == 0 and in_box >= 0 and s_min < 0.25 * box_r[in_box]:
        skip = True
    if skip:
        flags[F_KAPPA_SKIP] += 1
    else:
        kap, st = kappa_stencil(mode, co2, u, v, bu, bv, eta_h, vnorm,
                                fc[C_KAPPA_HFRAC], fc[C_STENCIL_RTOL])
        if st == 0:
            acc[A_KAP_SUM] += kap
            acc[A_KAP_N] += 1.0
            buck[bucket, B_KAP] += kap
            buck[bucket, B_KAP_N] += 1.0
        else:
            flags[F_KAPPA_FAIL] += 1


@njit(parallel=True, cache=True)
def run_paths(co, co_shift, sing_lifts, cos_floor, box_r, box_ca,
              sinv, sing_chart, sing_u, sing_v,
              seed, step_from, step_to,
              chart, pu, pv, nu0, nu1, logh, logh_burn,
              alive, abort,
              eta_rho, anch_ok, anch_c, anch_u, anch_v, anch_vn,
              in_box, box_entry_s, box_entry_step, box_zeta,
              flags, acc, buck, fc, ic):
    n = chart.shape[0]
    lam = complex(fc[C_LAM_RE], fc[C_LAM_IM])
    mode = ic[I_MODE]
    burn = ic[I_BURN_STEP]
    every = ic[I_SAMPLE_EVERY]
    bsteps = ic[I_BUCKET_STEPS]
    nbuck = buck.shape[1]
    for i in prange(n):
        if not alive[i]:
            continue
        k = chart[i]
        u = pu[i]
        v = pv[i]
        n0 = nu0[i]
        n1 = nu1[i]
        lh = logh[i]
        er = eta_rho[i]
        aok = anch_ok[i]
        ac = anch_c[i]
        au = anch_u[i]
        av = anch_v[i]
        avn = anch_vn[i]
        ib = in_box[i]
        bes = box_entry_s[i]
        bestp = box_entry_step[i]
        bz = box_zeta[i]
        for step in range(step_from, step_to):
            g1, g2 = normal_pair(seed, i, step)
            (code, k, u, v, n0, n1, lh, er, aok, ac, au, av, avn, ib,
             bes, bestp, bz, eta_h, s_min) = step_once(
                co, co_shift, mode, lam, sing_lifts, cos_floor, box_r,
                box_ca, sing_chart, sing_u, sing_v,
                seed, i, step, g1, g2,
                k, u, v, n0, n1, lh,
                er, aok, ac, au, av, avn,
                ib, bes, bestp, bz, flags[i], acc[i], fc, ic)
            if code != 0:
                alive[i] = False
                abort[i] = code
                break
            if step + 1 == burn:
                logh_burn[i] = lh
            if (step + 1) >= burn and (step + 1) % every == 0:
                bucket = (step + 1) // bsteps
                if bucket >= nbuck:
                    bucket = nbuck - 1
                sample_channels(co, co_shift, mode, lam, sing_lifts, box_r,
                                box_ca, sinv, sing_u, sing_v,
                                k, u, v, eta_h, s_min, ib,
                                flags[i], acc[i], buck[i], bucket, fc)
        chart[i] = k
        pu[i] = u
        pv[i] = v
        nu0[i] = n0
        nu1[i] = n1
        logh[i] = lh
        eta_rho[i] = er
        anch_ok[i] = aok
        anch_c[i] = ac
        anch_u[i] = au
        anch_v[i] = av
        anch_vn[i] = avn
        in_box[i] = ib
        box_entry_s[i] = bes
        box_entry_step[i] = bestp
        box_zeta[i] = bz
