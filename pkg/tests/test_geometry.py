import math

import numpy as np
import pytest

from neumann_bounds.geometry import (
    ConvexCell,
    FractalTreeSpec,
    GeometryError,
    StarDomainSpec,
    WhitneyChain,
    WhitneyTriple,
    build_snowflake_tree,
    build_star_domain,
    cell_diameter,
    cell_volume,
    intersection_volume,
    monte_carlo_intersection_volume,
    snowflake_level_count,
    star_discretization_error,
    star_membership,
    triple_link_volume,
    union_volume_2d,
)

SQRT3 = math.sqrt(3.0)


def unit_square(dx=0.0, dy=0.0):
    return ConvexCell([(dx, dy), (1 + dx, dy), (1 + dx, 1 + dy), (dx, 1 + dy)])


def equilateral(side=1.0, dx=0.0, dy=0.0):
    return ConvexCell(
        [(dx, dy), (dx + side, dy), (dx + side / 2, dy + side * SQRT3 / 2)]
    )


class TestCellBasics:
    def test_unit_square_volume(self):
        assert cell_volume(unit_square()) == pytest.approx(1.0, abs=1e-15)

    def test_equilateral_area(self):
        assert cell_volume(equilateral()) == pytest.approx(SQRT3 / 4, rel=1e-14)

    def test_unit_square_diameter(self):
        assert cell_diameter(unit_square()) == pytest.approx(math.sqrt(2.0), rel=1e-14)

    def test_equilateral_diameter_is_side(self):
        assert cell_diameter(equilateral(side=0.7)) == pytest.approx(0.7, rel=1e-14)

    def test_degenerate_segment_rejected(self):
        with pytest.raises(GeometryError):
            ConvexCell([(0, 0), (1, 0), (2, 0)])

    def test_interior_vertex_rejected(self):
        with pytest.raises(GeometryError):
            ConvexCell([(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)])

    def test_dimension_validation(self):
        with pytest.raises(GeometryError):
            ConvexCell([(0,), (1,)])

    @pytest.mark.parametrize("lam", [0.5, 2.0, 3.0])
    def test_scaling_homogeneity_2d(self, lam):
        cell = equilateral(side=1.3, dx=0.2, dy=-0.4)
        scaled = cell.scaled(lam)
        assert cell_volume(scaled) == pytest.approx(lam**2 * cell_volume(cell), rel=1e-12)
        assert cell_diameter(scaled) == pytest.approx(lam * cell_diameter(cell), rel=1e-12)

    @pytest.mark.parametrize("lam", [0.5, 2.0, 3.0])
    def test_scaling_homogeneity_3d(self, lam):
        cube = ConvexCell([(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        scaled = cube.scaled(lam)
        assert cell_volume(scaled) == pytest.approx(lam**3, rel=1e-12)
        assert cell_diameter(scaled) == pytest.approx(lam * math.sqrt(3.0), rel=1e-12)


class TestIntersection:
    def test_shifted_squares(self):
        assert intersection_volume(unit_square(), unit_square(dx=0.5)) == pytest.approx(
            0.5, rel=1e-12
        )

    def test_disjoint(self):
        assert intersection_volume(unit_square(), unit_square(dx=3.0)) == 0.0

    def test_self_intersection_matches_volume(self):
        cell = equilateral(side=1.7, dx=0.3)
        assert intersection_volume(cell, cell) == pytest.approx(
            cell_volume(cell), rel=1e-10
        )

    def test_symmetry(self):
        a, b = equilateral(1.2), unit_square(dx=0.3, dy=0.1)
        assert intersection_volume(a, b) == pytest.approx(
            intersection_volume(b, a), abs=1e-12
        )

    def test_dimension_mismatch(self):
        cube = ConvexCell([(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        with pytest.raises(GeometryError):
            intersection_volume(unit_square(), cube)

    def test_triangle_pair_against_monte_carlo(self):
        # oracle: membership sampling, 1e7 points, agreement within 3 SE
        t1 = equilateral()
        t2 = equilateral(dx=0.5)
        exact = intersection_volume(t1, t2)
        est, se = monte_carlo_intersection_volume(t1, t2, samples=10**7, seed=42)
        assert se > 0.0
        assert abs(exact - est) <= 3.0 * se

    def test_3d_shifted_cubes(self):
        c1 = ConvexCell([(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        c2 = ConvexCell([(x + 0.25, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        assert intersection_volume(c1, c2) == pytest.approx(0.75, rel=1e-9)

    def test_3d_disjoint(self):
        c1 = ConvexCell([(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        c2 = ConvexCell([(x + 2.0, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        assert intersection_volume(c1, c2) == 0.0


class TestUnionVolume:
    def test_two_squares(self):
        polys = [unit_square().hull_polygon(), unit_square(dx=0.5).hull_polygon()]
        assert union_volume_2d(polys) == pytest.approx(1.5, rel=1e-12)

    def test_three_squares_chain(self):
        polys = [unit_square(dx=0.5 * i).hull_polygon() for i in range(3)]
        assert union_volume_2d(polys) == pytest.approx(2.0, rel=1e-12)

    def test_nested(self):
        big = unit_square().hull_polygon()
        small = ConvexCell([(0.2, 0.2), (0.4, 0.2), (0.4, 0.4), (0.2, 0.4)]).hull_polygon()
        assert union_volume_2d([big, small]) == pytest.approx(1.0, rel=1e-12)


class TestWhitneyContainers:
    def row_of_squares(self, count, overlap=0.5):
        return [unit_square(dx=i * (1 - overlap)) for i in range(count)]

    def test_triple_from_cells(self):
        q1, r2, q3 = self.row_of_squares(3)
        t = WhitneyTriple.from_cells(q1, r2, q3)
        assert t.v_q1r2 == pytest.approx(0.5, rel=1e-12)
        assert t.v_r2q3 == pytest.approx(0.5, rel=1e-12)
        assert t.volume() == pytest.approx(2.0, rel=1e-12)

    def test_triple_rejects_touching_outer_cells(self):
        q1, r2, _ = self.row_of_squares(3)
        q3 = unit_square(dx=0.75)  # overlaps q1 in area 0.25
        with pytest.raises(GeometryError):
            WhitneyTriple.from_cells(q1, r2, q3)

    def test_triple_rejects_nonpositive_overlap(self):
        q1, r2, q3 = self.row_of_squares(3)
        with pytest.raises(GeometryError):
            WhitneyTriple(q1, r2, q3, 0.0, 0.5)

    def test_link_volume_shared_cell(self):
        cells = self.row_of_squares(5)
        t1 = WhitneyTriple.from_cells(*cells[0:3])
        t2 = WhitneyTriple.from_cells(*cells[2:5])
        # A_1 = [0,2]x[0,1] and A_2 = [1,3]x[0,1] meet exactly in the shared square
        link = triple_link_volume(t1, t2)
        assert link == pytest.approx(1.0, rel=1e-12)

    def test_chain_validation(self):
        cells = self.row_of_squares(5)
        t1 = WhitneyTriple.from_cells(*cells[0:3])
        t2 = WhitneyTriple.from_cells(*cells[2:5])
        chain = WhitneyChain.from_triples([t1, t2], multiplicity=2)
        assert len(chain.link_volumes) == 1
        with pytest.raises(GeometryError):
            WhitneyChain(triples=(t1, t2), link_volumes=(0.0,), multiplicity=2)
        with pytest.raises(GeometryError):
            WhitneyChain(triples=(t1, t2), link_volumes=(1.0,), multiplicity=3)
        with pytest.raises(GeometryError):
            WhitneyChain(triples=(), link_volumes=(), multiplicity=1)


class TestStarDomain:
    def test_alpha_recomputed(self):
        spec = StarDomainSpec(delta=2.0)
        assert spec.alpha == pytest.approx(2.0 * (SQRT3 - 1) / 2, rel=1e-15)

    def test_vertical_extent(self):
        spec = StarDomainSpec(delta=1.0, n=2)
        omega1, _ = build_star_domain(spec)
        ys = omega1.vertices[:, 1]
        assert ys.max() - ys.min() == pytest.approx(SQRT3 - 1.0, rel=1e-14)

    def test_piece_volume_formula(self):
        spec = StarDomainSpec(delta=1.0, n=2)
        omega1, omega2 = build_star_domain(spec)
        expected = 4.0 * spec.alpha * spec.delta  # 2 (sqrt3 - 1)
        assert cell_volume(omega1) == pytest.approx(expected, rel=1e-12)
        assert cell_volume(omega2) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(2.0 * (SQRT3 - 1.0), rel=1e-15)

    def test_piece_volume_against_monte_carlo(self):
        # oracle: membership sampling of the defining inequalities, 1e7 points
        spec = StarDomainSpec(delta=1.0, n=2)
        omega1, _ = build_star_domain(spec)
        rng = np.random.default_rng(7)
        lo = np.array([-(spec.delta + spec.alpha), -spec.alpha])
        hi = np.array([spec.delta + spec.alpha, spec.alpha])
        pts = rng.uniform(lo, hi, size=(10**7, 2))
        inside = (pts[:, 1] < spec.alpha) & (
            np.maximum(np.abs(pts[:, 0]) - spec.delta, -spec.alpha) < pts[:, 1]
        )
        estimate = np.prod(hi - lo) * inside.mean()
        assert cell_volume(omega1) == pytest.approx(estimate, abs=1e-3)

    def test_union_volume_against_monte_carlo(self):
        # oracle: membership sampling of the union inequalities, 1e7 points
        spec = StarDomainSpec(delta=1.0, n=2)
        omega1, omega2 = build_star_domain(spec)
        union = (
            cell_volume(omega1)
            + cell_volume(omega2)
            - intersection_volume(omega1, omega2)
        )
        assert union == pytest.approx(
            4 * spec.alpha * spec.delta + 2 * spec.alpha**2, rel=1e-12
        )
        rng = np.random.default_rng(11)
        lo = np.array([-(spec.delta + spec.alpha), -spec.alpha])
        hi = np.array([spec.delta + spec.alpha, spec.alpha])
        pts = rng.uniform(lo, hi, size=(10**7, 2))
        estimate = np.prod(hi - lo) * star_membership(pts, spec).mean()
        assert union == pytest.approx(estimate, abs=2e-3)

    def test_delta_scaling(self):
        one = build_star_domain(StarDomainSpec(delta=1.0, n=2))
        two = build_star_domain(StarDomainSpec(delta=2.0, n=2))
        assert cell_volume(two[0]) == pytest.approx(4.0 * cell_volume(one[0]), rel=1e-12)

    def test_3d_piece_volume_within_discretization_error(self):
        spec = StarDomainSpec(delta=1.0, n=3, mgon=64)
        omega1, omega2 = build_star_domain(spec)
        d, a = spec.delta, spec.alpha
        frustum = 2 * a / 3 * ((d + a) ** 2 + (d + a) * (d - a) + (d - a) ** 2) * math.pi
        deficit = 1.0 - cell_volume(omega1) / frustum
        assert 0.0 < deficit <= star_discretization_error(spec.mgon)
        assert cell_volume(omega2) == pytest.approx(cell_volume(omega1), rel=1e-12)

    def test_invalid_dimension(self):
        with pytest.raises(GeometryError):
            StarDomainSpec(delta=1.0, n=4)


class TestSnowflakeTree:
    def test_level_one(self):
        tree = build_snowflake_tree(FractalTreeSpec(a=1.0, depth=1))
        level = tree.levels[1]
        assert level.count == 3
        assert level.side == pytest.approx(1.0 / 3.0, rel=1e-15)
        assert level.area == pytest.approx(SQRT3 / 36.0, rel=1e-14)

    def test_level_three_count(self):
        tree = build_snowflake_tree(FractalTreeSpec(a=1.0, depth=3))
        assert tree.levels[3].count == 12

    def test_root_level(self):
        tree = build_snowflake_tree(FractalTreeSpec(a=2.0, depth=0))
        assert tree.levels[0].count == 1
        assert tree.levels[0].side == 2.0
        assert tree.multiplicity == 1

    def test_depth_overflow_rejected(self):
        with pytest.raises(GeometryError):
            FractalTreeSpec(a=1.0, depth=63)

    def test_analytic_level_mass_closed_form(self):
        a = 1.0
        tree = build_snowflake_tree(FractalTreeSpec(a=a, depth=10))
        for j in range(1, 11):
            level = tree.levels[j]
            assert level.count == snowflake_level_count(j) == 3 * 2 ** (j - 1)
            assert level.count * level.area == pytest.approx(
                3 * 2 ** (j - 1) * SQRT3 * a**2 / (4 * 3 ** (2 * j)), rel=1e-14
            )

    def test_materialized_cells_match_analytics(self):
        tree = build_snowflake_tree(FractalTreeSpec(a=1.0, depth=3), materialize_depth=3)
        for j, level_cells in enumerate(tree.cells):
            assert len(level_cells) == tree.levels[j].count
            for cell in level_cells:
                assert cell_volume(cell) == pytest.approx(tree.levels[j].area, rel=1e-10)
                assert cell_diameter(cell) == pytest.approx(tree.levels[j].side, rel=1e-10)

    def test_materialized_children_sit_on_parent_edges(self):
        tree = build_snowflake_tree(FractalTreeSpec(a=1.0, depth=2), materialize_depth=2)
        parents = tree.cells[1]

        def on_some_parent_edge(v):
            for p in parents:
                pv = p.vertices
                for i in range(3):
                    a, b = pv[i], pv[(i + 1) % 3]
                    e = b - a
                    t = np.dot(v - a, e) / np.dot(e, e)
                    off = abs((v[0] - a[0]) * e[1] - (v[1] - a[1]) * e[0])
                    if off < 1e-12 and -1e-9 <= t <= 1 + 1e-9:
                        return True
            return False

        for child in tree.cells[2]:
            # the base (two of the three vertices) lies on a parent edge
            on_edge = [on_some_parent_edge(v) for v in child.vertices]
            assert sum(on_edge) >= 2

    def test_overlap_fraction_metadata(self):
        spec = FractalTreeSpec(a=1.0, depth=4, overlap_fraction=0.25)
        tree = build_snowflake_tree(spec)
        for level in tree.levels[1:]:
            assert level.parent_overlap == pytest.approx(0.25 * level.area, rel=1e-14)
            assert level.star_area == pytest.approx(1.25 * level.area, rel=1e-14)
