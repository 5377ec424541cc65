import math

import numpy as np
import pytest

from strake.errors import GeometryError
from strake.geomkit import BoundaryLoop, CircularArc, Segment, naca4_loop
from strake.medial import approximate_medial, build_shell, detect_halos


def seg_dist(p, a, b):
    """Brute-force point to segment distance (independent of the package)."""
    p, a, b = (np.asarray(v, float) for v in (p, a, b))
    ab = b - a
    u = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - a - u * ab))


def simple_polyline(poly, closed):
    """O(n^2) proper-crossing scan; adjacent segments are skipped."""
    P = np.asarray(poly, float)
    segs = list(zip(P[:-1], P[1:]))
    n = len(segs)
    A = np.array([s[0] for s in segs])
    B = np.array([s[1] for s in segs])

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    for i in range(n):
        j = np.arange(i + 2, n)
        if closed and i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        d1 = orient(A[i], B[i], A[j])
        d2 = orient(A[i], B[i], B[j])
        d3 = orient(A[j], B[j], A[i])
        d4 = orient(A[j], B[j], B[i])
        if np.any((d1 * d2 < 0) & (d3 * d4 < 0)):
            return False
    return True


@pytest.fixture
def corner():
    return BoundaryLoop([Segment("wy", (0, 1), (0, 0)), Segment("wx", (0, 0), (1, 0))], False, ["wy", "wx"])


def test_circle_shell_has_no_halos():
    loop = BoundaryLoop([CircularArc("c", (0, 0), 1.0, 0.0, -2 * math.pi)], True, ["c"])
    sh = build_shell(loop, 0.1)
    assert sh.halos == []
    assert np.allclose(np.linalg.norm(sh.outer, axis=1), 1.1, atol=1e-12)


def test_corner_halo_on_bisector(corner):
    sh = build_shell(corner, 0.1)
    assert len(sh.halos) == 1
    h = sh.halos[0]
    assert np.allclose(h.position, [0.1, 0.1], atol=1e-12)
    assert h.source_entities == ("wx", "wy")


def test_naca_shell_simple_without_halos():
    sh = build_shell(naca4_loop("0012", "open"), 0.05)
    assert sh.halos == []
    assert simple_polyline(sh.outer, closed=True)


def test_corner_offsets_that_never_meet(corner):
    with pytest.raises(GeometryError):
        build_shell(corner, 2.0)


def test_nonpositive_thickness(corner):
    with pytest.raises(ValueError):
        build_shell(corner, 0.0)


def test_parallel_offsets_disjoint():
    a = np.c_[np.linspace(0, 1, 11), np.full(11, 0.1)]
    b = np.c_[np.linspace(1, 0, 11), np.full(11, 0.9)]
    assert detect_halos([(a, "A"), (b, "B")], 0.01) == []


def test_perpendicular_offsets_one_halo():
    a = np.c_[np.full(21, 0.1), np.linspace(1, -0.1, 21)]
    b = np.c_[np.linspace(-0.1, 1, 21), np.full(21, 0.1)]
    halos = detect_halos([(a, "wy"), (b, "wx")], 0.01)
    assert len(halos) == 1
    assert np.allclose(halos[0].position, [0.1, 0.1], atol=1e-12)


def stadium(a, b, T, n=400):
    """Closed curve at distance T from the segment ab (clockwise)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    e = (b - a) / np.linalg.norm(b - a)
    nrm = np.array([-e[1], e[0]])
    base = math.atan2(nrm[1], nrm[0])
    cap_b = b + T * np.c_[np.cos(base - np.linspace(0, math.pi, n)), np.sin(base - np.linspace(0, math.pi, n))]
    cap_a = a + T * np.c_[np.cos(base + math.pi - np.linspace(0, math.pi, n)),
                          np.sin(base + math.pi - np.linspace(0, math.pi, n))]
    return np.vstack([cap_b, cap_a, cap_b[:1]])


def test_overlapping_strips_halos_equidistant():
    T = 0.1
    wa, wb = ((0, 0), (1, 0)), ((1, 0.15), (0, 0.15))
    ents = {"A": [Segment("A", *wa)], "B": [Segment("B", *wb)]}
    halos = detect_halos([(stadium(*wa, T), "A"), (stadium(*wb, T), "B")], 0.005, ents, T)
    # The end caps cross beyond both wall ends, on the midline of the overlap.
    assert len(halos) == 2
    for h in halos:
        assert h.position[1] == pytest.approx(0.075, abs=1e-12)
        da, db = seg_dist(h.position, *wa), seg_dist(h.position, *wb)
        assert abs(da - db) <= 1e-6
        assert da == pytest.approx(T, abs=1e-9)


def test_medial_corner_bisector(corner):
    delta = 0.01
    edges = approximate_medial(corner, delta, 0.5)
    assert len(edges) == 1
    pl = edges[0].polyline
    assert len(pl) > 10
    assert np.max(np.abs(pl[:, 0] - pl[:, 1])) / math.sqrt(2) <= 2 * delta


def test_medial_parallel_walls_midline():
    h, delta = 0.1, 0.005
    lo = BoundaryLoop([Segment("lo", (0, 0), (1, 0))], False, ["lo"], "lo")
    hi = BoundaryLoop([Segment("hi", (1, 2 * h), (0, 2 * h))], False, ["hi"], "hi")
    edges = approximate_medial([lo, hi], delta, 0.5)
    assert len(edges) >= 1
    for e in edges:
        assert set(e.source_entities) == {"lo", "hi"}
        assert np.allclose(e.polyline[:, 1], h, atol=2 * delta)
        assert np.allclose(e.radius_profile, h, atol=2 * delta)


def test_medial_aerofoil_and_wall_equidistant():
    delta, gap = 0.005, 0.1
    foil = naca4_loop("0012", "open")
    y0 = -0.06 - gap
    wall = BoundaryLoop([Segment("ground", (-0.5, y0), (1.5, y0))], False, ["ground"], "ground")
    edges = approximate_medial([foil, wall], delta, 0.2)
    pair = [e for e in edges if set(e.source_entities) == {"aerofoil-lower", "ground"}]
    assert pair
    # Brute force: nearest sample on each entity.
    lower = foil.curves[2]
    ls = lower.evaluate(np.linspace(lower.t_min, lower.t_max, 4001))
    for e in pair:
        for p in e.polyline:
            d_foil = np.min(np.linalg.norm(ls - p, axis=1))
            d_wall = abs(p[1] - y0)
            assert abs(d_foil - d_wall) <= 2 * delta


def test_medial_collinear_samples():
    line = BoundaryLoop([Segment("a", (0, 0), (1, 0)), Segment("b", (1, 0), (2, 0))], False, ["a", "b"])
    with pytest.raises(GeometryError):
        approximate_medial(line, 0.1, 1.0)
