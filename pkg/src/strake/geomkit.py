"""Parametric curve kernel used by every meshing stage.

All geometry queries go through :class:`CurveHandle` objects, so the
meshing code never needs to know whether a wall is an analytic NACA
surface, a straight segment or a sampled polyline.

Each backend may evaluate in a smoothed internal parameter ``s`` that is
distinct from the public parameter ``t``.  The NACA surfaces use
``t = s**2`` so the square-root behaviour of the thickness law at the
leading edge disappears from every numerical routine (projection,
quadrature, normals).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import GeometryError, ParameterRangeError

__all__ = [
    "CurveHandle",
    "Naca4Surface",
    "Segment",
    "CircularArc",
    "Polyline",
    "Composite",
    "BoundaryLoop",
    "eval_curve",
    "project_point",
    "arc_length",
    "param_at_arclength",
    "offset_samples",
    "arclength_params",
    "naca4_loop",
    "NACA_OPEN_TE",
    "NACA_CLOSED_TE",
]

NACA_OPEN_TE = -0.1015
NACA_CLOSED_TE = -0.1036

_SCAN_POINTS = 256
_PARAM_EPS = 1e-12


class CurveHandle:
    """Base class for a parametric planar curve.

    Parameters
    ----------
    id : str
        Identifier used in error messages and geometry associations.
    t_min, t_max : float
        Public parameter range.
    reversed : bool
        If True the curve is traversed from ``t_max`` to ``t_min``; the
        left normal is taken relative to that traversal direction.
    """

    backend = "abstract"
    singular_params: tuple[float, ...] = ()

    def __init__(self, id: str, t_min: float, t_max: float, reversed: bool = False):
        if not t_max > t_min:
            raise GeometryError(f"curve {id!r}: empty parameter range")
        self.id = id
        self.t_min = float(t_min)
        self.t_max = float(t_max)
        self.reversed = bool(reversed)

    # -- parameter plumbing -------------------------------------------------
    @property
    def param_range(self) -> tuple[float, float]:
        return (self.t_min, self.t_max)

    @property
    def orientation(self) -> int:
        return -1 if self.reversed else 1

    @property
    def t_start(self) -> float:
        return self.t_max if self.reversed else self.t_min

    @property
    def t_end(self) -> float:
        return self.t_min if self.reversed else self.t_max

    def _s(self, t):
        return t

    def _t(self, s):
        return s

    def _dt_ds(self, s):
        return np.ones_like(np.asarray(s, dtype=float))

    def _point_s(self, s) -> np.ndarray:
        raise NotImplementedError

    def _deriv_s(self, s) -> np.ndarray:
        raise NotImplementedError

    def _check(self, t):
        t_arr = np.asarray(t, dtype=float)
        span = self.t_max - self.t_min
        lo, hi = self.t_min - _PARAM_EPS * span, self.t_max + _PARAM_EPS * span
        if np.any(t_arr < lo) or np.any(t_arr > hi) or np.any(~np.isfinite(t_arr)):
            raise ParameterRangeError(
                f"curve {self.id!r}: parameter {t} outside [{self.t_min}, {self.t_max}]"
            )
        return np.clip(t_arr, self.t_min, self.t_max)

    # -- public queries -------------------------------------------------------
    def evaluate(self, t) -> np.ndarray:
        return self._point_s(self._s(self._check(t)))

    __call__ = evaluate

    def derivative(self, t) -> np.ndarray:
        """dc/dt; infinite at singular parameters of the backend."""
        t = self._check(t)
        s = self._s(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._deriv_s(s) / np.asarray(self._dt_ds(s))[..., None]

    def tangent(self, t) -> np.ndarray:
        """Unit tangent in the traversal direction (finite at singular points)."""
        d = self._deriv_s(self._s(self._check(t)))
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return d * self.orientation

    def normal(self, t) -> np.ndarray:
        """Unit normal to the left of the traversal direction."""
        tg = self.tangent(t)
        return np.stack([-tg[..., 1], tg[..., 0]], axis=-1)

    def speed_s(self, s):
        return np.linalg.norm(self._deriv_s(s), axis=-1)

    # -- geometric algorithms (overridable) --------------------------------
    def project(self, p) -> tuple[float, float]:
        p = np.asarray(p, dtype=float)
        s_lo, s_hi = self._s(self.t_min), self._s(self.t_max)
        s_grid = np.linspace(s_lo, s_hi, _SCAN_POINTS + 1)
        d2 = np.sum((self._point_s(s_grid) - p) ** 2, axis=-1)
        n = len(s_grid)
        cand = [
            i for i in range(n)
            if (i == 0 or d2[i] <= d2[i - 1]) and (i == n - 1 or d2[i] <= d2[i + 1])
        ]
        cand = sorted(cand, key=lambda i: (d2[i], i))[:3]

        def g(s):
            c = self._point_s(s)
            return float(np.dot(c - p, self._deriv_s(s)))

        best = None
        for i in cand:
            lo, hi = s_grid[max(i - 1, 0)], s_grid[min(i + 1, n - 1)]
            g_lo, g_hi = g(lo), g(hi)
            if g_lo >= 0.0:
                s_star = lo
            elif g_hi <= 0.0:
                s_star = hi
            else:
                s_star = optimize.brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps,
                                         maxiter=200)
            # Brent can stop one ulp-bracket short of a grid node minimum.
            for s_try in (s_star, s_grid[i]):
                t_try = float(np.clip(self._t(s_try), self.t_min, self.t_max))
                dist = float(np.linalg.norm(self._point_s(s_try) - p))
                key = (dist, t_try)
                if best is None or dist < best[0] - 1e-15 or (
                    abs(dist - best[0]) <= 1e-15 and t_try < best[1]
                ):
                    best = key
        return best[1], best[0]

    def arc_length(self, t0: float, t1: float) -> float:
        s0, s1 = self._s(t0), self._s(t1)
        if s1 == s0:
            return 0.0
        val, _ = integrate.quad(self.speed_s, s0, s1, epsabs=0.0, epsrel=1e-12, limit=400)
        return float(val)

    def invert_arc(self, t0: float, length: float) -> float:
        """Parameter t >= t0 with arc_length(t0, t) == length."""
        if length <= 0.0:
            return t0
        s0, s_hi = self._s(t0), self._s(self.t_max)
        lo, hi = s0, s_hi
        s = s0 + length / max(float(self.speed_s(s0)), 1e-300)
        if not lo < s < hi:
            s = 0.5 * (lo + hi)
        for _ in range(100):
            f = integrate.quad(self.speed_s, s0, s, epsabs=0.0, epsrel=1e-13, limit=200)[0] - length
            if f > 0:
                hi = s
            else:
                lo = s
            if abs(f) <= 1e-15 * max(length, 1.0) or hi - lo <= 1e-16 * max(1.0, abs(s)):
                break
            step = s - f / float(self.speed_s(s))
            s = step if lo < step < hi else 0.5 * (lo + hi)
        return float(np.clip(self._t(s), self.t_min, self.t_max))

    def __repr__(self):
        return f"{type(self).__name__}({self.id!r}, [{self.t_min}, {self.t_max}])"


class Naca4Surface(CurveHandle):
    """Upper or lower surface of a NACA 4-digit section, x = t chordwise."""

    singular_params = (0.0,)

    def __init__(self, id: str, digits: str = "0012", side: str = "upper",
                 te: str = "open", reversed: bool = False):
        if len(digits) != 4 or not digits.isdigit():
            raise GeometryError(f"NACA digits must be 4 numerals, got {digits!r}")
        if side not in ("upper", "lower"):
            raise GeometryError(f"side must be upper or lower, got {side!r}")
        if te not in ("open", "closed"):
            raise GeometryError(f"te must be open or closed, got {te!r}")
        super().__init__(id, 0.0, 1.0, reversed)
        self.backend = f"naca4-{side}"
        self.digits = digits
        self.side = side
        self.sign = 1.0 if side == "upper" else -1.0
        self.m = int(digits[0]) / 100.0
        self.p = int(digits[1]) / 10.0
        self.tau = int(digits[2:]) / 100.0
        self.coef = (0.2969, -0.1260, -0.3516, 0.2843,
                     NACA_OPEN_TE if te == "open" else NACA_CLOSED_TE)
        self.cambered = self.m > 0.0 and self.p > 0.0

    def _s(self, t):
        return np.sqrt(np.maximum(t, 0.0)) if isinstance(t, np.ndarray) else math.sqrt(max(t, 0.0))

    def _t(self, s):
        return s * s

    def _dt_ds(self, s):
        return 2.0 * np.asarray(s, dtype=float)

    def thickness(self, x):
        """Half-thickness y_t at chordwise station x."""
        a0, a1, a2, a3, a4 = self.coef
        x = np.asarray(x, dtype=float)
        return 5 * self.tau * (a0 * np.sqrt(x) + a1 * x + a2 * x**2 + a3 * x**3 + a4 * x**4)

    def _yt_s(self, s):
        a0, a1, a2, a3, a4 = self.coef
        s2 = s * s
        yt = 5 * self.tau * s * (a0 + s * (a1 + s2 * (a2 + s2 * (a3 + s2 * a4))))
        dyt = 5 * self.tau * (a0 + 2 * a1 * s + s2 * s * (4 * a2 + s2 * (6 * a3 + 8 * a4 * s2)))
        return yt, dyt

    def _camber(self, t):
        m, p = self.m, self.p
        t = np.asarray(t, dtype=float)
        fore = t < p
        k = np.where(fore, m / p**2, m / (1 - p) ** 2)
        yc = np.where(fore, k * (2 * p * t - t * t), k * ((1 - 2 * p) + 2 * p * t - t * t))
        dyc = 2 * k * (p - t)
        d2yc = -2 * k
        return yc, dyc, d2yc

    def _point_s(self, s):
        s = np.asarray(s, dtype=float)
        t = s * s
        yt, _ = self._yt_s(s)
        if not self.cambered:
            return np.stack([t, self.sign * yt], axis=-1)
        yc, dyc, _ = self._camber(t)
        th = np.arctan(dyc)
        return np.stack([t - self.sign * yt * np.sin(th), yc + self.sign * yt * np.cos(th)], axis=-1)

    def _deriv_s(self, s):
        s = np.asarray(s, dtype=float)
        yt, dyt = self._yt_s(s)
        if not self.cambered:
            return np.stack([2 * s, self.sign * dyt], axis=-1)
        t = s * s
        yc, dyc, d2yc = self._camber(t)
        th = np.arctan(dyc)
        dth = d2yc * 2 * s / (1 + dyc**2)
        dx = 2 * s - self.sign * (dyt * np.sin(th) + yt * np.cos(th) * dth)
        dy = dyc * 2 * s + self.sign * (dyt * np.cos(th) - yt * np.sin(th) * dth)
        return np.stack([dx, dy], axis=-1)


class Segment(CurveHandle):
    """Straight segment from ``a`` (t=0) to ``b`` (t=1)."""

    backend = "segment"

    def __init__(self, id: str, a, b, reversed: bool = False):
        super().__init__(id, 0.0, 1.0, reversed)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if np.linalg.norm(self.b - self.a) == 0.0:
            raise GeometryError(f"segment {id!r} has zero length")

    def _point_s(self, s):
        s = np.asarray(s, dtype=float)
        return self.a + s[..., None] * (self.b - self.a)

    def _deriv_s(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self.b - self.a, s.shape + (2,)).copy()

    def project(self, p):
        d = self.b - self.a
        t = float(np.clip(np.dot(np.asarray(p, float) - self.a, d) / np.dot(d, d), 0.0, 1.0))
        return t, float(np.linalg.norm(self._point_s(t) - p))

    def arc_length(self, t0, t1):
        return float((t1 - t0) * np.linalg.norm(self.b - self.a))

    def invert_arc(self, t0, length):
        return float(min(t0 + length / np.linalg.norm(self.b - self.a), 1.0))


class CircularArc(CurveHandle):
    """Circular arc; t in [0, 1] maps linearly onto [theta0, theta1]."""

    backend = "arc"

    def __init__(self, id: str, center, radius: float, theta0: float, theta1: float,
                 reversed: bool = False):
        super().__init__(id, 0.0, 1.0, reversed)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.theta0 = float(theta0)
        self.theta1 = float(theta1)

    def _point_s(self, s):
        th = self.theta0 + np.asarray(s, dtype=float) * (self.theta1 - self.theta0)
        return self.center + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def _deriv_s(self, s):
        dth = self.theta1 - self.theta0
        th = self.theta0 + np.asarray(s, dtype=float) * dth
        return self.radius * dth * np.stack([-np.sin(th), np.cos(th)], axis=-1)


class Polyline(CurveHandle):
    """Piecewise-linear curve, parameterized by normalized chord length."""

    backend = "polyline"

    def __init__(self, id: str, points, closed: bool = False, reversed: bool = False):
        super().__init__(id, 0.0, 1.0, reversed)
        pts = np.asarray(points, dtype=float)
        if closed and np.linalg.norm(pts[0] - pts[-1]) > 0:
            pts = np.vstack([pts, pts[:1]])
        if len(pts) < 2:
            raise GeometryError(f"polyline {id!r} needs at least 2 points")
        self.points = pts
        self.closed = closed
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg == 0):
            raise GeometryError(f"polyline {id!r} has repeated points")
        self.length = float(seg.sum())
        self.knots = np.concatenate([[0.0], np.cumsum(seg)]) / self.length
        self.knots[-1] = 1.0

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.knots, s, side="right") - 1, 0, len(self.knots) - 2)
        return i, (s - self.knots[i]) / (self.knots[i + 1] - self.knots[i])

    def _point_s(self, s):
        i, u = self._locate(s)
        return self.points[i] + u[..., None] * (self.points[i + 1] - self.points[i])

    def _deriv_s(self, s):
        i, _ = self._locate(s)
        return (self.points[i + 1] - self.points[i]) * self.length / (
            np.linalg.norm(self.points[i + 1] - self.points[i], axis=-1)[..., None]
        )

    def normal(self, t):
        # At vertices use the bisector of the adjacent segment normals, scaled
        # so an offset point keeps distance d from both segments.
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(self._check(t)).astype(float)
        d = np.diff(self.points, axis=0)
        nseg = np.stack([-d[:, 1], d[:, 0]], axis=-1)
        nseg /= np.linalg.norm(nseg, axis=1, keepdims=True)
        i, u = self._locate(t)
        out = nseg[i].copy()
        nseg_count = len(nseg)
        at_end = np.isclose(u, 1.0, atol=1e-14)
        at_vertex = np.isclose(u, 0.0, atol=1e-14) | at_end
        for k in np.nonzero(at_vertex)[0]:
            j = i[k] + (1 if at_end[k] else 0)
            prev = j - 1 if j > 0 else (nseg_count - 1 if self.closed else None)
            nxt = j if j < nseg_count else (0 if self.closed else None)
            parts = [nseg[q] for q in (prev, nxt) if q is not None]
            v = np.sum(parts, axis=0)
            v = v / np.linalg.norm(v)
            if len(parts) == 2:
                v = v / np.dot(v, parts[0])
            out[k] = v
        out = out * self.orientation
        return out[0] if scalar else out

    def project(self, p):
        p = np.asarray(p, dtype=float)
        a, b = self.points[:-1], self.points[1:]
        d = b - a
        u = np.clip(np.einsum("ij,ij->i", p - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        foot = a + u[:, None] * d
        dist = np.linalg.norm(foot - p, axis=1)
        i = int(np.argmin(dist))
        t = self.knots[i] + u[i] * (self.knots[i + 1] - self.knots[i])
        return float(t), float(dist[i])

    def arc_length(self, t0, t1):
        return float((t1 - t0) * self.length)

    def invert_arc(self, t0, length):
        return float(min(t0 + length / self.length, 1.0))


class Composite(CurveHandle):
    """Concatenation of curves; piece i covers t in [i, i+1]."""

    backend = "composite"

    def __init__(self, id: str, pieces: Sequence[CurveHandle], reversed: bool = False):
        super().__init__(id, 0.0, float(len(pieces)), reversed)
        self.pieces = list(pieces)
        for a, b in zip(self.pieces, self.pieces[1:]):
            pa, pb = a.evaluate(a.t_end), b.evaluate(b.t_start)
            if np.linalg.norm(pa - pb) > 1e-10:
                raise GeometryError(f"composite {id!r}: pieces {a.id!r}/{b.id!r} not C0")

    def _local(self, i: int, u: float) -> float:
        c = self.pieces[i]
        span = c.t_max - c.t_min
        return c.t_max - u * span if c.reversed else c.t_min + u * span

    def _piece(self, t):
        i = min(int(math.floor(t)), len(self.pieces) - 1)
        c = self.pieces[i]
        span = c.t_max - c.t_min
        return i, c, self._local(i, t - i), (-span if c.reversed else span)

    def _point_s(self, s):
        s_arr = np.asarray(s, dtype=float)
        out = np.array([self._piece(v)[1].evaluate(self._piece(v)[2]) for v in s_arr.ravel()])
        return out.reshape(s_arr.shape + (2,))

    def _deriv_s(self, s):
        s_arr = np.asarray(s, dtype=float)
        res = []
        for v in s_arr.ravel():
            _, c, tc, scale = self._piece(v)
            sc = c._s(tc)
            res.append(c._deriv_s(sc) / np.asarray(c._dt_ds(sc)) * scale)
        return np.array(res).reshape(s_arr.shape + (2,))

    def project(self, p):
        best = None
        for i, c in enumerate(self.pieces):
            tc, dist = c.project(p)
            span = c.t_max - c.t_min
            u = (c.t_max - tc) / span if c.reversed else (tc - c.t_min) / span
            if best is None or dist < best[1] - 1e-15:
                best = (i + u, dist)
        return best

    def arc_length(self, t0, t1):
        total = 0.0
        for i, c in enumerate(self.pieces):
            lo, hi = max(t0, i), min(t1, i + 1)
            if hi <= lo:
                continue
            a, b = sorted((self._local(i, lo - i), self._local(i, hi - i)))
            total += c.arc_length(a, b)
        return total


# -- module-level operations ---------------------------------------------------

def eval_curve(curve: CurveHandle, t) -> np.ndarray:
    """Point(s) on ``curve`` at parameter ``t``."""
    return curve.evaluate(t)


def project_point(curve: CurveHandle, p) -> tuple[float, float]:
    """Globally closest parameter on ``curve`` to ``p`` and the distance."""
    return curve.project(np.asarray(p, dtype=float))


def arc_length(curve: CurveHandle, t0: float, t1: float) -> float:
    if t1 < t0:
        raise ValueError(f"curve {curve.id!r}: reversed interval [{t0}, {t1}]")
    curve._check([t0, t1])
    return curve.arc_length(float(t0), float(t1))


def param_at_arclength(curve: CurveHandle, t0: float, length: float) -> float:
    """Parameter reached after travelling ``length`` from ``t0`` in +t."""
    return curve.invert_arc(float(t0), float(length))


def arclength_params(curve: CurveHandle, t0: float, t1: float, n: int) -> np.ndarray:
    """n+1 parameters on [t0, t1] (t0 < t1) at equal arc-length spacing."""
    total = arc_length(curve, t0, t1)
    out = np.empty(n + 1)
    out[0], out[-1] = t0, t1
    step = total / n
    for k in range(1, n):
        out[k] = curve.invert_arc(out[k - 1], step)
    return out


def offset_samples(curve: CurveHandle, d: float, delta: float) -> np.ndarray:
    """Raw offset polyline at distance ``d`` to the left of the traversal.

    Samples are spaced at most ``delta`` apart in arc length and ordered
    along the traversal direction.  Self-intersections are kept.
    """
    if not d > 0:
        raise ValueError(f"offset distance must be positive, got {d}")
    if not delta > 0:
        raise ValueError(f"sample spacing must be positive, got {delta}")
    total = arc_length(curve, curve.t_min, curve.t_max)
    n = max(1, int(math.ceil(total / delta - 1e-9)))
    t = arclength_params(curve, curve.t_min, curve.t_max, n)
    if curve.reversed:
        t = t[::-1]
    pts = curve.evaluate(t) + d * np.asarray(curve.normal(t))
    return pts


@dataclass
class BoundaryLoop:
    """Ordered chain of curves bounding the fluid on their left."""

    curves: list
    closed: bool = True
    entity_tags: list = field(default_factory=list)
    name: str = "body"

    def __post_init__(self):
        if not self.entity_tags:
            self.entity_tags = [c.id for c in self.curves]
        if len(self.entity_tags) != len(self.curves):
            raise GeometryError("one entity tag per curve required")
        self.check()

    @property
    def diameter(self) -> float:
        pts = np.vstack([c.evaluate(np.linspace(c.t_min, c.t_max, 65)) for c in self.curves])
        span = pts.max(axis=0) - pts.min(axis=0)
        return float(np.hypot(*span))

    def joints(self):
        """(i, j) index pairs of consecutive curves meeting end-to-start."""
        n = len(self.curves)
        pairs = [(i, i + 1) for i in range(n - 1)]
        if self.closed:
            pairs.append((n - 1, 0))
        return pairs

    def check(self):
        tol = 1e-12 * max(self.diameter, 1.0)
        for i, j in self.joints():
            a, b = self.curves[i], self.curves[j]
            gap = np.linalg.norm(a.evaluate(a.t_end) - b.evaluate(b.t_start))
            if gap > tol:
                raise GeometryError(
                    f"loop {self.name!r}: curves {a.id!r} and {b.id!r} do not meet (gap {gap:.3e})"
                )

    def signed_area(self, samples: int = 2000) -> float:
        pts = []
        for c in self.curves:
            t = np.linspace(c.t_start, c.t_end, samples)
            pts.append(c.evaluate(t)[:-1])
        pts = np.vstack(pts)
        x, y = pts[:, 0], pts[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def curve(self, cid: str) -> CurveHandle:
        for c in self.curves:
            if c.id == cid:
                return c
        raise KeyError(cid)


def naca4_loop(digits: str = "0012", te: str = "open", name: str = "aerofoil") -> BoundaryLoop:
    """Clockwise aerofoil loop (fluid on the left): upper, TE face, lower.

    The trailing-edge face is a separate segment entity; for a closed
    trailing edge the loop has only the two surfaces.
    """
    upper = Naca4Surface(f"{name}-upper", digits, "upper", te)
    lower = Naca4Surface(f"{name}-lower", digits, "lower", te, reversed=True)
    if te == "closed":
        return BoundaryLoop([upper, lower], True, [upper.id, lower.id], name)
    face = Segment(f"{name}-te", upper.evaluate(1.0), lower.evaluate(1.0))
    return BoundaryLoop([upper, face, lower], True, [upper.id, face.id, lower.id], name)
