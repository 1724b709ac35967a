"""Degree-d holomorphic foliations on the projective plane.

A foliation is stored through a homogeneous degree-d vector field
F = (F0, F1, F2) on C^3; the chart fields are its affine reductions
(F_{j+1} - u F_j, F_{j+2} - v F_j) on chart j, polynomials of total degree
<= d+1. Custom input given in a single chart is homogenized first, which
also validates the degree structure of its top terms.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels as K
from .projective import ChartPoint, best_chart, fs_distance
from .rng import normal_pair

BOX_RADIUS_CAP = 0.2
NEWTON_STARTS = 200
NEWTON_TOL = 1e-12
HYPERBOLIC_IM_TOL = 1e-9


class FoliationError(ValueError):
    """Configuration failure: degenerate field or non-hyperbolic singularity."""


@dataclass(frozen=True)
class PolyVectorField:
    """Homogeneous field plus its three dense affine chart reductions.

    hom[c, i, j] is the coefficient of x0^(d-i-j) x1^i x2^j in component c;
    chart_coeffs[k, c, i, j] is the coefficient of u^i v^j in the chart-k
    affine field.
    """
    degree: int
    hom: np.ndarray
    chart_coeffs: np.ndarray = dc_field(repr=False, default=None)

    def __post_init__(self):
        if self.chart_coeffs is None:
            object.__setattr__(self, "chart_coeffs",
                               charts_from_hom(self.degree, self.hom))

    def evaluate(self, p: ChartPoint) -> np.ndarray:
        pv, qv = K.eval_field(self.chart_coeffs[p.chart],
                              complex(p.u), complex(p.v))
        return np.array([pv, qv], dtype=np.complex128)

    def jacobian(self, p: ChartPoint) -> np.ndarray:
        _, _, pu, pvv, qu, qv = K.eval_field_jac(
            self.chart_coeffs[p.chart], complex(p.u), complex(p.v))
        return np.array([[pu, pvv], [qu, qv]], dtype=np.complex128)


def evaluate_field(fld: PolyVectorField, p: ChartPoint) -> np.ndarray:
    return fld.evaluate(p)


def field_jacobian(fld: PolyVectorField, p: ChartPoint) -> np.ndarray:
    return fld.jacobian(p)


def charts_from_hom(d: int, hom: np.ndarray) -> np.ndarray:
    """Affine reductions of the homogeneous field on the three cyclic charts.

    On chart k the lift is x_k = 1, x_{k+1} = u, x_{k+2} = v, so a monomial
    with exponent vector e contributes u^(e_{k+1}) v^(e_{k+2}), and the field
    is (F_{k+1} - u F_k, F_{k+2} - v F_k).
    """
    D = d + 2
    co = np.zeros((3, 2, D, D), dtype=np.complex128)
    for k in range(3):
        for c in range(3):
            crel = (c - k) % 3
            for i in range(d + 1):
                for j in range(d + 1 - i):
                    a = hom[c, i, j]
                    if a == 0:
                        continue
                    e = (d - i - j, i, j)  # exponents of (x0, x1, x2)
                    pu = e[(k + 1) % 3]
                    pv = e[(k + 2) % 3]
                    if crel == 0:
                        co[k, 0, pu + 1, pv] -= a
                        co[k, 1, pu, pv + 1] -= a
                    elif crel == 1:
                        co[k, 0, pu, pv] += a
                    else:
                        co[k, 1, pu, pv] += a
    return co


def hom_eval(hom: np.ndarray, d: int, x) -> np.ndarray:
    """The three homogeneous components at x = (x0, x1, x2)."""
    out = np.zeros(3, dtype=np.complex128)
    for c in range(3):
        tot = 0.0 + 0.0j
        for i in range(d + 1):
            for j in range(d + 1 - i):
                a = hom[c, i, j]
                if a != 0:
                    tot += a * x[1] ** i * x[2] ** j * x[0] ** (d - i - j)
        out[c] = tot
    return out


@dataclass(frozen=True)
class Singularity:
    location: ChartPoint
    eigenvalues: tuple
    ratio: complex
    hyperbolic: bool
    box_radius: float


@dataclass
class FoliationSpec:
    field: PolyVectorField
    singularities: list
    family_tag: str
    assumed_generic: bool = False
    _pack: object = dc_field(default=None, repr=False, compare=False)

    @property
    def degree(self) -> int:
        return self.field.degree


def jouanolou(d: int) -> FoliationSpec:
    """The degree-d Jouanolou foliation x1^d d/dx0 + x2^d d/dx1 + x0^d d/dx2.

    Its chart-2 affine field is (v^d - u^{d+1}, 1 - v u^d); all three charts
    share that expression by the cyclic symmetry.
    """
    if d < 2:
        raise FoliationError("jouanolou family requires degree >= 2")
    hom = np.zeros((3, d + 1, d + 1), dtype=np.complex128)
    hom[0, d, 0] = 1.0  # x1^d
    hom[1, 0, d] = 1.0  # x2^d
    hom[2, 0, 0] = 1.0  # x0^d
    fld = PolyVectorField(d, hom)
    spec = FoliationSpec(fld, find_singularities(fld), f"jouanolou-{d}")
    _require_hyperbolic(spec)
    return spec


def random_foliation(d: int, seed: int) -> FoliationSpec:
    """Foliation with i.i.d. complex-Gaussian homogeneous coefficients.

    Genericity (no invariant algebraic curve) is an unverified assumption
    recorded on the spec; degenerate or non-hyperbolic draws raise.
    """
    if d < 2:
        raise FoliationError("degree must be >= 2")
    hom = np.zeros((3, d + 1, d + 1), dtype=np.complex128)
    ctr = 0
    for c in range(3):
        for i in range(d + 1):
            for j in range(d + 1 - i):
                g1, g2 = normal_pair(seed, 77, ctr)
                hom[c, i, j] = (g1 + 1j * g2) / np.sqrt(2.0)
                ctr += 1
    fld = PolyVectorField(d, hom)
    spec = FoliationSpec(fld, find_singularities(fld),
                         f"random-{d}-seed{seed}", assumed_generic=True)
    _require_hyperbolic(spec)
    return spec


def _require_hyperbolic(spec: FoliationSpec):
    bad = [s for s in spec.singularities if not s.hyperbolic]
    if bad:
        locs = ", ".join(f"({s.location.u:.4f}, {s.location.v:.4f})"
                         for s in bad[:3])
        raise FoliationError(
            f"non-hyperbolic singularities (Im ratio below tolerance): {locs}")


def _poly_degree(c: np.ndarray) -> int:
    nz = np.nonzero(np.abs(c) > 1e-13 * (1.0 + np.abs(c).max()))[0]
    return int(nz[-1]) if len(nz) else -1


def _sylvester_det(p: np.ndarray, q: np.ndarray) -> complex:
    n = len(p) - 1
    m = len(q) - 1
    if n <= 0 or m <= 0:
        return p[-1] if m == 0 else q[-1]
    s = np.zeros((n + m, n + m), dtype=np.complex128)
    for r in range(m):
        s[r, r:r + n + 1] = p[::-1]
    for r in range(n):
        s[m + r, r:r + m + 1] = q[::-1]
    return np.linalg.det(s)


def _coprimality_check(fld: PolyVectorField):
    """Resultant-in-v spot check that P, Q share no common factor."""
    D = fld.degree + 2
    for k in range(3):
        best = 0.0
        for t in range(4):
            g1, g2 = normal_pair(2024, 11 + k, t)
            u = 0.7 * np.tanh(g1) + 0.2j * np.tanh(g2)
            pc = np.zeros(D, dtype=np.complex128)
            qc = np.zeros(D, dtype=np.complex128)
            for j in range(D):
                pj = 0.0 + 0.0j
                qj = 0.0 + 0.0j
                for i in range(D - 1, -1, -1):
                    pj = pj * u + fld.chart_coeffs[k, 0, i, j]
                    qj = qj * u + fld.chart_coeffs[k, 1, i, j]
                pc[j] = pj
                qc[j] = qj
            dp = _poly_degree(pc)
            dq = _poly_degree(qc)
            if dp < 0 or dq < 0:
                continue
            best = max(best, abs(_sylvester_det(pc[:dp + 1], qc[:dq + 1])))
        if best < 1e-10:
            raise FoliationError(
                f"chart {k} components appear to share a common factor "
                "(degenerate foliation; zero locus is not isolated)")


def _newton_polish(fld: PolyVectorField, p: ChartPoint, max_iter: int = 60):
    """Newton on the chart field; None unless it converges to a regular root."""
    u, v = complex(p.u), complex(p.v)
    k = p.chart
    for _ in range(max_iter):
        pv, qv, pu, pvv, qu, qvv = K.eval_field_jac(fld.chart_coeffs[k], u, v)
        det = pu * qvv - pvv * qu
        if abs(det) < 1e-14:
            return None
        du = (pv * qvv - pvv * qv) / det
        dv = (pu * qv - pv * qu) / det
        u -= du
        v -= dv
        if max(abs(u), abs(v)) > 8.0:
            return None
        if abs(du) + abs(dv) < 1e-14:
            break
    pv, qv = K.eval_field(fld.chart_coeffs[k], u, v)
    if max(abs(pv), abs(qv)) > NEWTON_TOL:
        return None
    jac = fld.jacobian(ChartPoint(k, u, v))
    smin = np.linalg.svd(jac, compute_uv=False)[-1]
    if smin < 1e-8 * max(1.0, float(np.abs(jac).max())):
        return None
    return ChartPoint(k, u, v)


def find_singularities(fld: PolyVectorField):
    """All common zeros of the chart fields, polished and classified.

    Multistart Newton with cross-chart deduplication; for a degree-d
    foliation with simple singularities the count certificate is d^2+d+1.
    Retries once with 4x the starts before reporting failure.
    """
    _coprimality_check(fld)
    d = fld.degree
    expected = d * d + d + 1
    for attempt, n_starts in enumerate((NEWTON_STARTS, 4 * NEWTON_STARTS)):
        found = []
        for k in range(3):
            for t in range(n_starts):
                g1, g2 = normal_pair(90125 + attempt, 3 * k + 1, 2 * t)
                g3, g4 = normal_pair(90125 + attempt, 3 * k + 2, 2 * t + 1)
                u = 1.1 * (g1 + 1j * g2) / np.sqrt(2)
                v = 1.1 * (g3 + 1j * g4) / np.sqrt(2)
                root = _newton_polish(fld, ChartPoint(k, u, v))
                if root is None:
                    continue
                root = best_chart(root)
                if any(fs_distance(root, r) < 1e-7 for r in found):
                    continue
                found.append(root)
        if len(found) == expected:
            return [classify_singularity(fld, r, _others=found)
                    for r in found]
    resid = [float(np.linalg.norm(fld.evaluate(r))) for r in found]
    raise FoliationError(
        f"found {len(found)} singularities, expected {expected} "
        f"(degree {d}); residuals {resid[:5]}")


def eigen_ratio(jac: np.ndarray):
    """Eigenvalues of a 2x2 linear part with the ratio oriented to Im > 0.

    Returns ((lam1, lam2), ratio, hyperbolic); flipping the axes replaces
    the ratio by its inverse, which restores a positive imaginary part.
    """
    tr = jac[0, 0] + jac[1, 1]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    disc = np.sqrt(complex(tr * tr - 4.0 * det))
    lam1 = (tr + disc) / 2.0
    lam2 = (tr - disc) / 2.0
    if abs(lam1) < abs(lam2):
        lam1, lam2 = lam2, lam1
    if lam1 == 0:
        raise FoliationError("degenerate singularity: zero eigenvalue")
    ratio = lam2 / lam1
    if ratio.imag < 0:
        lam1, lam2 = lam2, lam1
        ratio = 1.0 / ratio
    hyperbolic = abs(ratio.imag) > HYPERBOLIC_IM_TOL * abs(ratio)
    return (complex(lam1), complex(lam2)), complex(ratio), bool(hyperbolic)


def classify_singularity(fld: PolyVectorField, location: ChartPoint,
                         _others=None) -> Singularity:
    """Eigen-data of the linear part at a polished root.

    The box radius is capped at BOX_RADIUS_CAP and at a quarter of the
    distance to the nearest other singularity, so doubled boxes of distinct
    singularities stay disjoint.
    """
    loc = _newton_polish(fld, best_chart(location))
    if loc is None:
        raise FoliationError("location does not polish to a regular root")
    eigs, ratio, hyperbolic = eigen_ratio(fld.jacobian(loc))
    box = BOX_RADIUS_CAP
    if _others:
        dmin = min((fs_distance(loc, o) for o in _others
                    if fs_distance(loc, o) > 1e-7), default=np.inf)
        box = float(min(box, dmin / 4.0))
    return Singularity(loc, eigs, ratio, hyperbolic, box)


# ----------------------------------------------------------------------
# custom chart-field input
# ----------------------------------------------------------------------

def hom_from_chart(d: int, chart: int, pco: np.ndarray, qco: np.ndarray):
    """Homogeneous field from one chart's dense (P, Q) coefficients.

    The degree-(d+1) tails must be (u h, v h) for a common h of degree d
    (possibly zero); anything else cannot come from a degree-d foliation.
    """
    D = d + 2
    if pco.shape != (D, D) or qco.shape != (D, D):
        raise FoliationError(f"coefficient arrays must be {D}x{D}")
    scale = max(float(np.abs(pco).max()), float(np.abs(qco).max()), 1.0)
    for i in range(D):
        for j in range(D):
            if i + j > d + 1 and (abs(pco[i, j]) > 1e-9 * scale
                                  or abs(qco[i, j]) > 1e-9 * scale):
                raise FoliationError("total degree exceeds d + 1")
    hp = np.zeros((d + 1, d + 1), dtype=np.complex128)
    hq = np.zeros((d + 1, d + 1), dtype=np.complex128)
    for i in range(D):
        j = d + 1 - i
        if not 0 <= j < D:
            continue
        if i >= 1:
            hp[i - 1, j] = pco[i, j]
        elif abs(pco[i, j]) > 1e-9 * scale:
            raise FoliationError("top term of P lacks the u factor")
        if j >= 1:
            hq[i, j - 1] = qco[i, j]
        elif abs(qco[i, j]) > 1e-9 * scale:
            raise FoliationError("top term of Q lacks the v factor")
    if np.abs(hp - hq).max() > 1e-8 * scale:
        raise FoliationError("top terms of P and Q disagree: not a degree-d "
                             "foliation field")
    h = hp
    # local frame (x_chart, x_chart+1, x_chart+2): the x_chart component is
    # -h, the others are the x_chart-homogenizations of the degree<=d parts
    a_red = pco[:d + 1, :d + 1].copy()
    b_red = qco[:d + 1, :d + 1].copy()
    for i in range(d + 1):
        for j in range(d + 1):
            if i + j > d:
                a_red[i, j] = 0.0
                b_red[i, j] = 0.0
    hom_local = np.zeros((3, d + 1, d + 1), dtype=np.complex128)
    hom_local[0] = -h
    hom_local[1] = a_red
    hom_local[2] = b_red
    if chart == 0:
        return hom_local
    hom = np.zeros_like(hom_local)
    for c in range(3):
        for i in range(d + 1):
            for j in range(d + 1 - i):
                a = hom_local[c, i, j]
                if a == 0:
                    continue
                e = (d - i - j, i, j)
                e_abs = [0, 0, 0]
                for m in range(3):
                    e_abs[(chart + m) % 3] = e[m]
                hom[(c + chart) % 3, e_abs[1], e_abs[2]] += a
    return hom


def foliation_from_chart(d, chart, pco, qco, family_tag="custom"):
    fld = PolyVectorField(d, hom_from_chart(d, chart, np.asarray(pco),
                                            np.asarray(qco)))
    spec = FoliationSpec(fld, find_singularities(fld), family_tag,
                         assumed_generic=True)
    _require_hyperbolic(spec)
    return spec


def load_foliation(path) -> FoliationSpec:
    """Foliation specification file: {"family": "jouanolou", "degree": d}
    or {"degree": d, "chart": k, "P": [[i, j, re, im], ...], "Q": [...]}.
    """
    import json

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("family") == "jouanolou":
        return jouanolou(int(doc["degree"]))
    if doc.get("family") == "random":
        return random_foliation(int(doc["degree"]), int(doc.get("seed", 1)))
    d = int(doc["degree"])
    D = d + 2
    pco = np.zeros((D, D), dtype=np.complex128)
    qco = np.zeros((D, D), dtype=np.complex128)
    for i, j, re, im in doc["P"]:
        pco[int(i), int(j)] = re + 1j * im
    for i, j, re, im in doc["Q"]:
        qco[int(i), int(j)] = re + 1j * im
    return foliation_from_chart(d, int(doc.get("chart", 2)), pco, qco,
                                family_tag=doc.get("tag", "custom"))
