import warnings

import numpy as np
import pytest

from strake import lagrange
from strake.errors import ConformalityError, SplitError
from strake.hocurve import MappingChi, check_validity, curve_mesh, elevate
from strake.isosplit import (
    LayerSpec,
    SubelementMap,
    WakeSplit,
    layer_levels,
    split_bidirectional,
    split_boundary_layer,
    split_element,
    wake_ratio_profile,
)
from strake.linmesh import build_linear_mesh, conformality_check
from strake.mesh import Element, Mesh

from oracles import lagrange_eval

T = 0.05


def rect_chi(P, w=1.0, h=T):
    m = elevate(Mesh(np.array([[0, 0], [w, 0], [w, h], [0, h]], float), [Element("quad", [0, 1, 2, 3], "b")], {}), P)
    return MappingChi.from_element(m, 0)


def test_levels_reference_configuration():
    lv = layer_levels(LayerSpec(5, 2.0))
    assert np.allclose(lv[1:-1], [-0.935484, -0.806452, -0.548387, -0.032258], atol=1e-6)
    assert np.allclose(np.diff(lv), 2 * np.array([1, 2, 4, 8, 16]) / 31, atol=1e-15)


def test_levels_uniform_and_trivial():
    assert np.allclose(layer_levels(LayerSpec(4, 1.0))[1:-1], [-0.5, 0.0, 0.5], atol=1e-15)
    assert np.allclose(layer_levels(LayerSpec(1, 3.0)), [-1, 1])
    with pytest.raises(ValueError):
        LayerSpec(0, 2.0)


def test_affine_child_heights():
    kids = split_element(rect_chi(4), LayerSpec(5, 2.0), axis=1)
    heights = [k.nodes[:, 1].max() - k.nodes[:, 1].min() for k in kids]
    assert np.allclose(heights, T * np.array([1, 2, 4, 8, 16]) / 31, atol=1e-15)


def test_single_layer_identity():
    chi = rect_chi(3)
    (kid,) = split_element(chi, LayerSpec(1, 2.0))
    assert np.allclose(kid.nodes, chi.nodes, atol=1e-14)


def test_non_monotone_levels():
    with pytest.raises(ValueError):
        split_element(rect_chi(2), np.array([-1.0, 0.2, 0.1, 1.0]))


@pytest.fixture(scope="module")
def curved_bl(h_graph):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return curve_mesh(build_linear_mesh(h_graph, 0.01), h_graph.curves, 4)


def test_curved_children_on_parent(curved_bl):
    P = 4
    ref = lagrange.ref_nodes("quad", P)
    samples = lagrange.sample_points("quad", P)
    lv = layer_levels(LayerSpec(5, 2.0))
    n_checked = 0
    for ei, e in enumerate(curved_bl.elements):
        if not e.block.startswith("loop:") or ei % 10:
            continue
        chi = MappingChi.from_element(curved_bl, ei)
        kids = split_element(chi, LayerSpec(5, 2.0), axis=1)
        union = []
        for k, kid in enumerate(kids):
            lo, hi = lv[k], lv[k + 1]
            f_ref = np.c_[ref[:, 0], lo + (ref[:, 1] + 1) / 2 * (hi - lo)]
            assert np.max(np.linalg.norm(lagrange_eval(P, chi.nodes, f_ref) - kid.nodes, axis=1)) <= 1e-12
            union.append(np.c_[samples[:, 0], lo + (samples[:, 1] + 1) / 2 * (hi - lo)])
        d = chi.det(np.vstack(union))
        parent_scaled = d.min() / abs(d.max())
        for kid in kids:
            dk = kid.det(samples)
            assert dk.min() / abs(dk.max()) >= parent_scaled - 1e-9
        n_checked += 1
    assert n_checked > 5


def test_bidirectional_counts_and_corner_child():
    chi = rect_chi(4, T, T)
    kids = split_bidirectional(chi, LayerSpec(5, 2.0), LayerSpec(5, 2.0))
    assert len(kids) == 25
    c = kids[0].nodes
    assert np.allclose(c.min(axis=0), [0, 0], atol=1e-16)
    assert np.allclose(c.max(axis=0), [T / 31, T / 31], atol=1e-15)


def test_bidirectional_order_commutes(curved_bl):
    ei = next(i for i, e in enumerate(curved_bl.elements) if e.block.startswith("loop:"))
    chi = MappingChi.from_element(curved_bl, ei)
    a = split_bidirectional(chi, LayerSpec(5, 2.0), LayerSpec(3, 1.5), order="xi-first")
    b = split_bidirectional(chi, LayerSpec(5, 2.0), LayerSpec(3, 1.5), order="eta-first")
    assert max(np.max(np.abs(x.nodes - y.nodes)) for x, y in zip(a, b)) <= 1e-13


def test_bidirectional_strip_mismatch():
    with pytest.raises(ConformalityError):
        split_bidirectional(rect_chi(2, T, T), LayerSpec(5, 2.0), LayerSpec(5, 2.0),
                            strip_specs=(LayerSpec(5, 1.5), None))


def test_subelement_crossed_bounds():
    with pytest.raises(SplitError):
        SubelementMap(((-1, -1), (1, 1)), ((0.2, 0.5), (0.3, 0.4)))


def test_subelement_jacobian_finite_difference():
    f = SubelementMap(((-1.0, -0.8), (0.1, 0.4)), ((-0.5, -0.3), (0.6, 0.2)))
    xi = np.array([[0.1, -0.3], [-0.7, 0.5], [0.9, 0.9]])
    h = 1e-6
    for p in xi:
        J = np.column_stack([(f(p + [h, 0]) - f(p - [h, 0]))[0] / (2 * h),
                             (f(p + [0, h]) - f(p - [0, h]))[0] / (2 * h)])
        assert f.det(p)[0] == pytest.approx(np.linalg.det(J), rel=1e-7)


def test_wake_ratio_profile():
    assert wake_ratio_profile(2.0, 2.0, 0.0) == 2.0
    assert wake_ratio_profile(2.0, 2.0, 2.0) == 1.0
    assert wake_ratio_profile(2.0, 2.0, 1.0) == 1.5
    with pytest.raises(ValueError):
        wake_ratio_profile(2.0, 2.0, 2.5)


def wake_quad(x0, x1, half=0.1):
    nodes = np.array([[x0, -half], [x1, -half], [x1, half], [x0, half]], float)
    return Mesh(nodes, [Element("quad", [0, 1, 2, 3], "wake:0")], {})


def edge_fractions(m, x):
    ys = np.unique(np.round(m.nodes[np.isclose(m.nodes[:, 0], x), 1], 14))
    return (ys - ys[0]) / (ys[-1] - ys[0])


def test_wake_interior_blended_levels():
    # r(x) = 2 - x/2 gives 1.6 at x=0.8 and 1.5 at x=1.0.
    m = split_boundary_layer(wake_quad(0.8, 1.0), None, WakeSplit(5, 2.0, 2.0, (0.0, 0.0), (1.0, 0.0)))
    assert len(m.elements) == 5
    for x, r in ((0.8, 1.6), (1.0, 1.5)):
        want = (layer_levels(LayerSpec(5, r)) + 1) / 2
        assert np.allclose(edge_fractions(m, x), want, atol=1e-9)


def test_wake_far_end_uniform():
    m = split_boundary_layer(wake_quad(1.8, 2.0), None, WakeSplit(5, 2.0, 2.0, (0.0, 0.0), (1.0, 0.0)))
    assert np.allclose(np.diff(edge_fractions(m, 2.0)), 0.2, atol=1e-9)


def test_whole_h_mesh_counts(h_graph, curved_bl):
    origin, axis = h_graph.wake_axis
    m = split_boundary_layer(curved_bl, LayerSpec(5, 2.0), WakeSplit(5, 2.0, 2.0, origin, axis))
    kinds = [e.block.split(":")[0] for e in curved_bl.elements]
    n_strip = kinds.count("loop") + kinds.count("te-corner")
    n_junction = kinds.count("junction")
    n_wake = kinds.count("wake")
    assert len(m.elements) == 5 * n_strip + 25 * n_junction + 5 * n_wake
    assert conformality_check(m).ok
    assert check_validity(m).invalid == []
