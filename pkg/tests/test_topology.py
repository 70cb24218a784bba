import random
from collections import Counter

import pytest

from torusnet.config import SimConfig
from torusnet.topology import (
    ORDERS,
    RESPONSE_VC,
    XYZ,
    Geometry,
    RouteChoice,
    core_route,
    vc_assign,
)


@pytest.fixture
def geom():
    return Geometry(SimConfig(torus=(4, 4, 8), core_u=8, core_v=6))


def walk_core(u, v, target, U):
    ports = []
    while True:
        p = core_route((u, v), target, U)
        ports.append(p)
        if p.startswith("g"):
            return ports
        if target[0] == "edge" and ((p == "U-" and u == 0) or (p == "U+" and u == U - 1)):
            return ports
        u += {"U+": 1, "U-": -1}.get(p, 0)
        v += {"V+": 1, "V-": -1}.get(p, 0)


def test_core_route_dimension_order():
    assert walk_core(3, 2, ("tile", 7, 5, 0), 8) == ["U+"] * 4 + ["V+"] * 3 + ["g0"]
    assert walk_core(3, 2, ("tile", 3, 2, 1), 8) == ["g1"]
    assert set(walk_core(3, 2, ("edge", 1), 8)) == {"U+"}


def test_core_path_matches_core_route(geom):
    path = geom.core_path(0, 3, 2, ("tile", 7, 5, 0))
    assert [p for _, p in path] == walk_core(3, 2, ("tile", 7, 5, 0), 8)
    edge = geom.core_path(0, 3, 2, ("edge", 0))
    assert [c[3] for c, _ in edge] == [2] * 4  # v never changes on the way to an edge


def test_responses_always_xyz(geom):
    rng = random.Random(0)
    assert all(geom.select_dimension_order(True, rng) == XYZ for _ in range(100))


def test_dimension_orders_uniform(geom):
    rng = random.Random(1)
    counts = Counter(geom.select_dimension_order(False, rng) for _ in range(60_000))
    assert set(counts) == set(ORDERS)
    for c in counts.values():
        assert abs(c / 60_000 - 1 / 6) < 0.02


def test_x_only_displacement_routes_identically(geom):
    src, dst = ("G", 0, 1, 1, 0), ("G", 2, 1, 1, 0)
    routes = {tuple(l[:3] for l in geom.route(src, dst, RouteChoice(order=o, side=0)).links) for o in ORDERS}
    assert len(routes) == 1


def test_vc_assign():
    assert vc_assign(True, 1, 1) == RESPONSE_VC
    assert vc_assign(False, 0, 0) == 0
    assert vc_assign(False, 1, 0) == 2 and vc_assign(False, 1, 1) == 3


def test_dateline_sets_vc_after_wrap(geom):
    # node 3 -> node 0 along X+ crosses the X wrap link
    r = geom.route(("G", 3, 0, 0, 0), ("G", 0, 0, 0, 0), RouteChoice(side=0, balance=1))
    assert [l[3] for l in r.links] == [True]
    link_vcs = [vc for comp, _, vc in r.hops if comp[0] == "L"]
    assert link_vcs == [3]
    r = geom.route(("G", 0, 0, 0, 0), ("G", 1, 0, 0, 0), RouteChoice(side=0, balance=0))
    assert [vc for comp, _, vc in r.hops if comp[0] == "L"] == [0]


def test_responses_avoid_wrap_links(geom):
    r = geom.route(("G", 3, 0, 0, 0), ("G", 0, 0, 0, 0), RouteChoice(side=1), response=True)
    assert len(r.links) == 3 and not any(l[3] for l in r.links)
    assert all(vc == RESPONSE_VC for comp, _, vc in r.hops if comp[0] in ("E", "L"))


def test_through_traffic_uses_outer_column(geom):
    # X+ twice: the middle node forwards X+ -> X+ through column 0 only
    r = geom.route(("G", 0, 0, 0, 0), ("G", 2, 0, 0, 0), RouteChoice(side=0, columns=(2, 2, 2, 2)))
    mid = [comp for comp, _, _ in r.hops if comp[0] == "E" and comp[1] == 1]
    assert mid and all(comp[3] == 0 for comp in mid)


def test_turning_and_injected_traffic_use_inner_columns(geom):
    for cols in ((1, 1, 1, 1), (2, 2, 2, 2)):
        r = geom.route(("G", 0, 0, 0, 0), ("G", geom.node((1, 1, 0)), 0, 0, 0),
                       RouteChoice(order=(0, 1, 2), side=0, columns=cols))
        turn = [comp for comp, port, _ in r.hops if comp[0] == "E" and comp[1] == 1 and port in ("N", "S")]
        assert turn and all(comp[3] == cols[1] for comp in turn)
        src_side = [comp for comp, port, _ in r.hops if comp[0] == "E" and comp[1] == 0 and port in ("N", "S")]
        assert all(comp[3] == cols[0] for comp in src_side)


def test_routes_minimal_for_all_choices():
    g = Geometry(SimConfig(torus=(3, 2, 1), core_u=4, core_v=6))
    for a in range(g.num_nodes):
        for b in range(g.num_nodes):
            src, dst = ("G", a, 0, 1, 0), ("I", b, 1, 2)
            for ch in g.all_choices(src, dst):
                assert len(g.route(src, dst, ch).links) == g.distance(a, b)


def test_route_is_connected(geom):
    rng = random.Random(5)
    for _ in range(200):
        a, b = rng.randrange(geom.num_nodes), rng.randrange(geom.num_nodes)
        src = ("G", a, rng.randrange(8), rng.randrange(6), 0)
        dst = ("G", b, rng.randrange(8), rng.randrange(6), 1)
        resp = rng.random() < 0.5
        r = geom.route(src, dst, geom.random_choice(rng, resp), resp)
        comp, port = geom.attach(src)
        assert r.hops[0][0] == comp
        for (c1, p1, _), (c2, _, _) in zip(r.hops, r.hops[1:]):
            assert geom.downstream(c1, p1)[0] == c2
        assert geom.downstream(r.hops[-1][0], r.hops[-1][1])[0] == dst
