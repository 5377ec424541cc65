import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from strake import lagrange
from strake.errors import RelaxationError
from strake.geomkit import CircularArc, Naca4Surface, Segment, naca4_loop
from strake.hocurve import (
    MappingChi,
    check_validity,
    curve_mesh,
    elevate,
    jacobian_range,
    project_boundary_edges,
    relax_edge_nodes,
    smooth_interior_nodes,
    spring_energy,
)
from strake.linmesh import build_linear_mesh
from strake.mesh import Element, Mesh


def naca_yt(x):
    return 0.6 * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x**2 + 0.2843 * x**3 - 0.1015 * x**4)


def naca_dyt(x):
    return 0.6 * (0.2969 / (2 * np.sqrt(x)) - 0.1260 - 2 * 0.3516 * x + 3 * 0.2843 * x**2 - 4 * 0.1015 * x**3)


def quad_mesh(corners, kind="quad"):
    n = len(corners)
    return Mesh(np.asarray(corners, float), [Element(kind, list(range(n)), "b")], {})


@pytest.fixture(scope="module")
def naca_linear(h_graph):
    return build_linear_mesh(h_graph, 0.01)


def test_elevate_unit_square_p2():
    m = elevate(quad_mesh([[0, 0], [1, 0], [1, 1], [0, 1]]), 2)
    assert len(m.nodes) == 9
    assert np.allclose(m.nodes[m.elements[0].nodes[-1]], [0.5, 0.5])


def test_elevate_shares_edge_nodes():
    nodes = np.array([[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [0, 1]], float)
    m = Mesh(nodes, [Element("quad", [0, 1, 4, 5], "b"), Element("quad", [1, 2, 3, 4], "b")], {})
    h = elevate(m, 4)
    assert len(h.nodes) == 2 * 25 - 5
    a = set(h.elements[0].side_nodes(1)[1:-1])
    b = set(h.elements[1].side_nodes(3)[1:-1])
    assert a == b and len(a) == 3


def test_affine_quad_scaled_jacobian_one():
    m = elevate(quad_mesh([[0, 0], [2, 0.5], [2.5, 1.5], [0.5, 1.0]]), 3)
    assert check_validity(m).worst_scaled == pytest.approx(1.0, abs=1e-12)


def test_affine_triangle_scaled_jacobian_one():
    for P in (2, 3, 5):
        m = elevate(quad_mesh([[0, 0], [1, 0.2], [0.3, 1]], "tri"), P)
        assert check_validity(m).worst_scaled == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("P", [2, 3, 4, 6])
def test_rectangle_det(P):
    chi = MappingChi.from_element(elevate(quad_mesh([[0, 0], [2, 0], [2, 1], [0, 1]]), P), 0)
    lo, hi = jacobian_range(chi)
    assert lo == pytest.approx(0.5, abs=1e-12) and hi == pytest.approx(0.5, abs=1e-12)


def test_folded_quad_invalid():
    m = elevate(quad_mesh([[0, 0], [1, 0], [1, 1], [0, 1]]), 2)
    e = m.elements[0]
    m.nodes[e.side_nodes(0)[1]] = [0.5, 1.6]  # bottom edge bent through the top edge
    rep = check_validity(m)
    assert rep.min_det[0] < 0
    assert rep.invalid == [0]


def test_annular_sector_det():
    r0, dr, t0, dt = 1.0, 0.5, 0.3, math.pi / 8
    P = 4
    ref = lagrange.ref_nodes("quad", P)
    r = r0 + (ref[:, 0] + 1) / 2 * dr
    th = t0 + (ref[:, 1] + 1) / 2 * dt
    chi = MappingChi("quad", P, np.c_[r * np.cos(th), r * np.sin(th)])
    xi = lagrange.sample_points("quad", P)
    rs = r0 + (xi[:, 0] + 1) / 2 * dr
    det = chi.det(xi)
    assert det.min() > 0
    assert np.allclose(det, rs * dt * dr / 4, atol=1e-6)


def test_projection_idempotent_on_straight_wall():
    seg = Segment("w", (0, 0), (1, 0))
    m = Mesh(np.array([[0, 0], [1, 0], [1, 0.1], [0, 0.1]], float), [Element("quad", [0, 1, 2, 3], "b")],
             {"wall:w": [(0, 1)]}, {0: {"w": 0.0}, 1: {"w": 1.0}})
    h = elevate(m, 4)
    out = project_boundary_edges(h, [seg])
    assert np.max(np.abs(out.nodes - h.nodes)) <= 1e-10


def test_naca_leading_edge_nodes_on_surface(naca_linear):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = project_boundary_edges(elevate(naca_linear, 4), naca4_loop("0012", "open").curves)
    checked = 0
    for seq in m.patches["wall:aerofoil"]:
        p = m.nodes[list(seq)]
        if p[:, 0].max() < 0.05:
            assert np.allclose(np.abs(p[:, 1]), naca_yt(p[:, 0]), atol=1e-8)
            checked += 1
    assert checked >= 4


def test_relax_quarter_circle():
    arc = CircularArc("q", (0, 0), 1.0, 0.0, math.pi / 2)
    t = relax_edge_nodes(arc, np.array([0.0, 0.1, 0.2, 0.9, 1.0]) * (arc.t_end - arc.t_start) + arc.t_start)
    p = arc.evaluate(t[1:-1])
    ang = np.degrees(np.arctan2(p[:, 1], p[:, 0]))
    assert np.allclose(ang, [22.5, 45.0, 67.5], atol=1e-8)


def test_relax_straight_identity():
    seg = Segment("s", (0, 0), (2, 1))
    t = np.linspace(0, 1, 5)
    assert np.allclose(relax_edge_nodes(seg, t), t, atol=1e-12)


def test_relax_naca_arc_fractions():
    up = Naca4Surface("u", "0012", "upper")
    t = relax_edge_nodes(up, np.array([0.1, 0.15, 0.2, 0.3]))
    x = up.evaluate(t)[:, 0]

    def arc(a, b):
        return quad(lambda s: math.sqrt(1 + naca_dyt(s) ** 2), a, b, epsabs=1e-14, epsrel=1e-13)[0]

    total = arc(0.1, 0.3)
    frac = [arc(0.1, xi) / total for xi in x[1:-1]]
    assert np.allclose(frac, [1 / 3, 2 / 3], atol=1e-9)


def test_relax_energy_not_increased():
    up = Naca4Surface("u", "0012", "upper")
    t0 = np.array([0.1, 0.12, 0.25, 0.3])
    assert spring_energy(up, relax_edge_nodes(up, t0)) <= spring_energy(up, t0)


def test_relax_non_monotone():
    up = Naca4Surface("u", "0012", "upper")
    with pytest.raises(RelaxationError, match="'u'"):
        relax_edge_nodes(up, [0.1, 0.25, 0.2, 0.3], edge=(3, 4))


def test_smooth_affine_interior():
    corners = np.array([[0, 0], [2, 0.5], [2.5, 1.5], [0.5, 1.0]])
    m = elevate(quad_mesh(corners), 4)
    chi = MappingChi.from_element(m, 0)
    moved = chi.nodes.copy()
    moved[16:] += 0.05
    out = smooth_interior_nodes(MappingChi("quad", 4, moved))
    assert np.allclose(out.nodes, chi.nodes, atol=1e-13)


def test_smooth_p2_single_node():
    m = elevate(quad_mesh([[0, 0], [1, 0], [1.2, 1], [0, 1.4]]), 2)
    chi = MappingChi.from_element(m, 0)
    nodes = chi.nodes.copy()
    nodes[4:8] += np.array([[0, -0.1], [0.1, 0], [0, 0.2], [-0.05, 0]])
    out = smooth_interior_nodes(MappingChi("quad", 2, nodes))
    assert np.allclose(out.nodes[8], nodes[4:8].mean(axis=0), atol=1e-14)


def test_smooth_curved_boundary_layer(naca_linear, h_graph):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        raw = curve_mesh(naca_linear, h_graph.curves, 4, smooth=False)
        smooth = curve_mesh(naca_linear, h_graph.curves, 4, smooth=True)
    before, after = check_validity(raw), check_validity(smooth)
    interior, neigh = [], []
    lat = lagrange.lattice("quad", 4)
    index = {tuple(ij): k for k, ij in enumerate(lat)}
    for k in range(16, 25):
        i, j = lat[k]
        interior.append(k)
        neigh.append([index[(i + 1, j)], index[(i - 1, j)], index[(i, j + 1)], index[(i, j - 1)]])
    for ei, e in enumerate(smooth.elements):
        if e.block.startswith("loop:"):
            x = smooth.nodes[e.nodes]
            res = max(np.linalg.norm(x[k] - x[nb].mean(axis=0)) for k, nb in zip(interior, neigh))
            assert res < 1e-11
    assert after.invalid == []
    assert after.worst_scaled >= before.worst_scaled - 1e-9


def test_sampling_rule_refinement_stable(naca_linear, h_graph):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curved = curve_mesh(naca_linear, h_graph.curves, 4)
    coarse, fine = check_validity(curved, "default"), check_validity(curved, "fine")
    assert np.max(np.abs(coarse.min_det - fine.min_det)) < 1e-6
    assert fine.invalid == []
