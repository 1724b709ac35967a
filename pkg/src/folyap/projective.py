"""Affine charts on the projective plane and the Fubini-Study metric.

Chart j (j = 0, 1, 2) covers the locus x_j != 0 with coordinates
(u, v) = (x_{j+1}/x_j, x_{j+2}/x_j), indices mod 3. The Fubini-Study norm
here is the geometric normalization whose distance between points is
arccos |<p, q>| / (|p| |q|); the mass estimator converts area units where
needed.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K

SWITCH_THRESHOLD = 2.5


@dataclass(frozen=True)
class ChartPoint:
    """A point of the projective plane in one affine chart."""
    chart: int
    u: complex
    v: complex

    def lift(self):
        """Unnormalized homogeneous coordinates (x0, x1, x2)."""
        return np.array(K.lift(self.chart, complex(self.u), complex(self.v)),
                        dtype=np.complex128)

    def unit_lift(self):
        x = self.lift()
        return x / np.linalg.norm(x)


def to_chart(p: ChartPoint, target: int) -> ChartPoint:
    """Express p in another chart; raises on the target's removed line."""
    u, v = K.convert_chart(p.chart, complex(p.u), complex(p.v), target)
    if not (np.isfinite(u.real) and np.isfinite(v.real)
            and np.isfinite(u.imag) and np.isfinite(v.imag)):
        raise ValueError(f"point not representable in chart {target}")
    return ChartPoint(target, u, v)


def best_chart(p: ChartPoint) -> ChartPoint:
    """Canonical representative: the chart with the largest lift coordinate."""
    k = K.best_chart(p.chart, complex(p.u), complex(p.v))
    return to_chart(p, k)


def transition_derivative(p: ChartPoint, target: int) -> np.ndarray:
    t00, t01, t10, t11 = K.trans_deriv(p.chart, complex(p.u), complex(p.v),
                                       target)
    return np.array([[t00, t01], [t10, t11]], dtype=np.complex128)


def fs_distance(p: ChartPoint, q: ChartPoint) -> float:
    return K.fs_dist(p.chart, complex(p.u), complex(p.v),
                     q.chart, complex(q.u), complex(q.v))


def fs_inner(p: ChartPoint, a, b) -> complex:
    """Fubini-Study inner product of tangent vectors at p (chart coords)."""
    return K.inner(0, complex(p.u), complex(p.v),
                   complex(a[0]), complex(a[1]),
                   complex(b[0]), complex(b[1]))


def fs_norm(p: ChartPoint, a) -> float:
    return float(np.sqrt(K.norm2(0, complex(p.u), complex(p.v),
                                 complex(a[0]), complex(a[1]))))
