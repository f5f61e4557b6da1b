import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oasim.geometry import (
    angular_coverage, limited_view_mask, linear_part_mask, load_csv, make_array, mask_tag,
    parse_mask, sparse_mask,
)

R = 40e-3


def radii(g):
    return np.hypot(g.positions[:, 0], g.positions[:, 1])


def angles(g):
    return np.unwrap(np.arctan2(g.positions[:, 1], g.positions[:, 0]))


def test_semi_circle():
    g = make_array("semi_circle")
    assert g.n_elements == 256
    np.testing.assert_allclose(radii(g), R, atol=1e-9)
    a = angles(g)
    assert abs(abs(a[-1] - a[0]) - np.pi) < 1e-12
    np.testing.assert_allclose(np.diff(a), -np.pi / 255, atol=1e-12)
    # left to right
    assert np.all(np.diff(g.positions[:, 0]) > 0)


def test_virtual_circle():
    g = make_array("virtual_circle")
    assert g.n_elements == 1024
    np.testing.assert_allclose(radii(g), R, atol=1e-9)
    np.testing.assert_allclose(np.diff(angles(g)), 2 * np.pi / 1024, atol=1e-12)
    # element 512 at the top, facing down onto the imaging region
    np.testing.assert_allclose(g.positions[512], [0.0, R], atol=1e-15)


def test_multisegment_layout():
    g = make_array("multisegment")
    assert g.n_elements == 256
    left, line, right = g.positions[:64], g.positions[64:192], g.positions[192:]
    np.testing.assert_allclose(np.diff(line[:, 0]), 0.25e-3, atol=1e-12)
    np.testing.assert_allclose(line[:, 1], line[0, 1])
    np.testing.assert_allclose([line[0, 0], line[-1, 0]], [-31.75e-3 / 2, 31.75e-3 / 2], atol=1e-12)
    for arc in (left, right):
        np.testing.assert_allclose(np.hypot(arc[:, 0], arc[:, 1]), R, atol=1e-9)
        chord = np.hypot(*np.diff(arc, axis=0).T)
        # arc-length pitch 0.6 mm on a 40 mm radius
        np.testing.assert_allclose(chord, 2 * R * np.sin(0.6e-3 / R / 2), rtol=1e-12)
    assert np.all(np.diff(g.positions[:, 0]) > 0)
    # mirror symmetric about the y axis
    np.testing.assert_allclose(g.positions[::-1, 0], -g.positions[:, 0], atol=1e-15)
    np.testing.assert_allclose(g.positions[::-1, 1], g.positions[:, 1], atol=1e-15)
    # concave parts widen the coverage beyond the linear part
    assert angular_coverage(g) > angular_coverage(g, linear_part_mask(g)) + np.radians(90)


def test_linear_is_center_of_multisegment():
    lin, ms = make_array("linear"), make_array("multisegment")
    assert lin.n_elements == 128
    np.testing.assert_array_equal(lin.positions, ms.positions[64:192])


@pytest.mark.parametrize("kind", ["semi_circle", "multisegment", "linear", "virtual_circle"])
def test_make_array_bit_identical(kind):
    assert make_array(kind).positions.tobytes() == make_array(kind).positions.tobytes()


def test_unknown_array():
    with pytest.raises(ValueError):
        make_array("hexagon")


def test_sparse_masks():
    sc, vc = make_array("semi_circle"), make_array("virtual_circle")
    m = sparse_mask(sc, 128)
    assert m.count == 128 and np.all(np.diff(m.indices) == 2) and m.indices[0] == 0
    m = sparse_mask(vc, 32)
    assert m.count == 32 and np.all(np.diff(m.indices) == 32)
    assert sparse_mask(vc, 1024).active.all()
    with pytest.raises(ValueError):
        sparse_mask(sc, 100)


def test_limited_view_masks():
    sc, vc = make_array("semi_circle"), make_array("virtual_circle")
    m = limited_view_mask(sc, 128)
    assert m.count == 128 and np.all(np.diff(m.indices) == 1)
    assert list(m.indices[[0, -1]]) == [64, 191]
    # quarter circle (endpoint-inclusive spacing pi/255)
    assert abs(angular_coverage(sc, m) - np.pi / 2) < np.pi / 255
    m = limited_view_mask(vc, 128)
    # 127 gaps of 2*pi/1024 span the eighth circle minus one gap
    assert abs(angular_coverage(vc, m) - 127 * 2 * np.pi / 1024) < 1e-12
    assert limited_view_mask(vc, 1024).active.all()
    # odd leftover: extra element on the high side
    assert list(limited_view_mask(sc, 127).indices[[0, -1]]) == [64, 190]
    with pytest.raises(ValueError):
        limited_view_mask(sc, 257)


def test_linear_part_mask():
    ms = make_array("multisegment")
    m = linear_part_mask(ms)
    assert m.count == 128 and list(m.indices[[0, -1]]) == [64, 191]
    np.testing.assert_array_equal(ms.positions[m.active], make_array("linear").positions)
    with pytest.raises(ValueError):
        linear_part_mask(make_array("semi_circle"))


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(["semi_circle", "virtual_circle", "multisegment"]),
       log_keep=st.integers(0, 8))
def test_sparse_mask_regenerates_identically(kind, log_keep):
    g = make_array(kind)
    keep = 2**log_keep
    if g.n_elements % keep:
        return
    a, b = sparse_mask(g, keep), sparse_mask(g, keep)
    np.testing.assert_array_equal(a.indices, b.indices)
    assert a.count == keep


def test_parse_mask_and_tags():
    vc = make_array("virtual_circle")
    assert parse_mask(vc, "none") is None
    assert parse_mask(vc, "sparse:64").count == 64
    assert parse_mask(vc, "limited:128").kind == "limited_view"
    assert mask_tag("sparse:64") == "_ss64" and mask_tag("limited:128") == "_lv128" and mask_tag("none") == ""
    with pytest.raises(ValueError):
        parse_mask(vc, "random:3")


def test_csv_export(tmp_path):
    g = make_array("multisegment")
    g.to_csv(tmp_path / "ms.csv")
    header = (tmp_path / "ms.csv").read_text().splitlines()[0]
    assert header == "element_index,x_m,y_m"
    np.testing.assert_array_equal(load_csv(tmp_path / "ms.csv"), g.positions)
