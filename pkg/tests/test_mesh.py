import numpy as np
import pytest

from stochstokes import mesh as meshmod


def test_uniform_mesh_counts():
    m = 4
    mesh = meshmod.build_uniform(m)
    assert mesh.n_vertices == (m + 1) ** 2
    assert mesh.n_triangles == 2 * m * m
    assert mesh.n_edges == 3 * m * m + 2 * m
    assert mesh.h == 1.0 / m


def test_triangles_counterclockwise_and_cover_domain():
    mesh = meshmod.build_uniform(5)
    areas = mesh.signed_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 1.0) < 1e-14


def test_boundary_vertex_count():
    m = 6
    mesh = meshmod.build_uniform(m)
    assert mesh.boundary_vertex_mask.sum() == 4 * m


def test_boundary_edges_lie_on_sides():
    mesh = meshmod.build_uniform(3)
    mids = mesh.edge_midpoints[mesh.boundary_edge_mask]
    on_side = (
        (np.abs(mids[:, 0]) < 1e-14) | (np.abs(mids[:, 0] - 1) < 1e-14)
        | (np.abs(mids[:, 1]) < 1e-14) | (np.abs(mids[:, 1] - 1) < 1e-14)
    )
    assert on_side.all()
    assert mesh.boundary_edge_mask.sum() == 4 * mesh.m


def test_edge_midpoints_unique():
    mesh = meshmod.build_uniform(4)
    mids = mesh.edge_midpoints
    rounded = {(round(x, 12), round(y, 12)) for x, y in mids}
    assert len(rounded) == mesh.n_edges


def test_periodic_maps_identify_opposite_sides():
    mesh = meshmod.build_uniform(4, "periodic")
    vmap = meshmod.periodic_vertex_map(mesh)
    # Representatives fold x = 1 onto x = 0 and y = 1 onto y = 0.
    for v, rep in enumerate(vmap):
        xv, yv = mesh.vertex_ij[v]
        xr, yr = mesh.vertex_ij[rep]
        assert xr == (0 if xv == mesh.m else xv)
        assert yr == (0 if yv == mesh.m else yv)
    n_rep = np.sum(vmap == np.arange(mesh.n_vertices))
    assert n_rep == mesh.m ** 2

    emap = meshmod.periodic_edge_map(mesh)
    assert np.sum(emap == np.arange(mesh.n_edges)) == 3 * mesh.m ** 2


def test_periodic_maps_require_periodic_mode():
    mesh = meshmod.build_uniform(3)
    with pytest.raises(ValueError):
        meshmod.periodic_vertex_map(mesh)
    with pytest.raises(ValueError):
        meshmod.periodic_edge_map(mesh)


def test_locate_points_reproduces_linear_functions():
    mesh = meshmod.build_uniform(5)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(40, 2))
    tri, bary = meshmod.locate_points(mesh, pts)
    assert np.all(bary >= -1e-12)
    assert np.allclose(bary.sum(axis=1), 1.0)
    # Barycentric combination of vertex coordinates recovers the points.
    rec = np.einsum("qj,qjd->qd", bary, mesh.vertices[mesh.triangles[tri]])
    assert np.allclose(rec, pts, atol=1e-13)


def test_locate_points_handles_vertices_and_edges():
    mesh = meshmod.build_uniform(3)
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [1.0 / 3.0, 2.0 / 3.0], [0.5, 0.0]])
    tri, bary = meshmod.locate_points(mesh, pts)
    rec = np.einsum("qj,qjd->qd", bary, mesh.vertices[mesh.triangles[tri]])
    assert np.allclose(rec, pts, atol=1e-14)


def test_write_text(tmp_path):
    mesh = meshmod.build_uniform(2)
    nodes = tmp_path / "nodes.txt"
    elems = tmp_path / "elements.txt"
    meshmod.write_text(mesh, str(nodes), str(elems))
    assert len(nodes.read_text().strip().splitlines()) == mesh.n_vertices
    assert len(elems.read_text().strip().splitlines()) == mesh.n_triangles
