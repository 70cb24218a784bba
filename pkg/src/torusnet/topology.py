"""Machine geometry, component wiring and route computation.

Component ids are tuples:

    ("C", n, u, v)        core router of tile (u, v) on node n
    ("R", n, s, row)      row adapter on chip side s (0 left, 1 right)
    ("E", n, s, col, row) edge router; col 0 is the outermost column
    ("L", n, s, d)        channel (adapter + SERDES + wire) leaving node n
                          through side s in torus direction d
    ("G", n, u, v, k)     geometry core endpoint
    ("I", n, s, row)      interaction control block endpoint

Each chip side carries one channel slice per torus direction, so the slice a
packet takes is the chip side it leaves from, and it stays on that side for
its whole trip.  Ports are named after the neighbour they face, for both
directions: core "U-"/"U+"/"V-"/"V+", edge "N"/"S"/"O" (outward)/"I"
(inward), plus "ch", "ra", "icb", "g0", "g1".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .config import SimConfig

# direction index -> (dim, sign)
DIRS = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))
DIR_NAMES = ("X+", "X-", "Y+", "Y-", "Z+", "Z-")
ORDERS = tuple(itertools.permutations(range(3)))  # XYZ, XZY, YXZ, YZX, ZXY, ZYX
XYZ = (0, 1, 2)
REQUEST_VCS = (0, 1, 2, 3)
RESPONSE_VC = 4
CORE_REQ_VC = 0
CORE_RESP_VC = 1
INNER_COLUMNS = (1, 2)


def dir_index(dim: int, sign: int) -> int:
    return dim * 2 + (0 if sign > 0 else 1)


def opposite(d: int) -> int:
    return d ^ 1


@dataclass(frozen=True)
class RouteChoice:
    """Every random decision an oblivious route depends on."""

    order: tuple[int, int, int] = XYZ
    ties: tuple[int, int, int] = (1, 1, 1)
    side: Optional[int] = None
    balance: int = 0
    columns: tuple[int, ...] = ()

    def column(self, i: int) -> int:
        return self.columns[i] if i < len(self.columns) else INNER_COLUMNS[0]


@dataclass
class Route:
    """Hop list ``(component, out_port, vc_at_next_input)`` plus metadata."""

    hops: list
    src: tuple
    dst: tuple
    node_path: list  # node indices visited, source first
    links: list  # (node, side, dir, crosses_wrap)
    response: bool = False

    @property
    def torus_hops(self) -> int:
        return len(self.links)


class Geometry:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.dims = tuple(cfg.torus)
        self.U = cfg.core_u
        self.V = cfg.core_v
        self.num_nodes = self.dims[0] * self.dims[1] * self.dims[2]
        span = self.V // 3
        off = max(0, (span - 2) // 2)
        self.channel_row = tuple((d // 2) * span + off + (d % 2) for d in range(6))
        self.row_channel = {r: d for d, r in enumerate(self.channel_row)}
        self.diameter = sum(d // 2 for d in self.dims)
        self._wiring: dict = {}

    # -- nodes -----------------------------------------------------------

    def coord(self, n: int) -> tuple[int, int, int]:
        X, Y, _ = self.dims
        return (n % X, (n // X) % Y, n // (X * Y))

    def node(self, c: Sequence[int]) -> int:
        X, Y, _ = self.dims
        return c[0] + X * (c[1] + Y * c[2])

    def neighbor(self, n: int, d: int) -> int:
        dim, sign = DIRS[d]
        c = list(self.coord(n))
        c[dim] = (c[dim] + sign) % self.dims[dim]
        return self.node(c)

    def crosses_wrap(self, n: int, d: int) -> bool:
        dim, sign = DIRS[d]
        x = self.coord(n)[dim]
        size = self.dims[dim]
        return (sign > 0 and x == size - 1) or (sign < 0 and x == 0)

    def active_dirs(self) -> list[int]:
        return [d for d in range(6) if self.dims[DIRS[d][0]] > 1]

    def offsets(self, a: int, b: int) -> list[tuple[int, int, bool]]:
        """Per dimension: (steps, sign, tie) for a minimal torus route a -> b."""
        ca, cb = self.coord(a), self.coord(b)
        out = []
        for dim in range(3):
            size = self.dims[dim]
            delta = (cb[dim] - ca[dim]) % size
            if delta == 0:
                out.append((0, 1, False))
            elif 2 * delta < size:
                out.append((delta, 1, False))
            elif 2 * delta > size:
                out.append((size - delta, -1, False))
            else:
                out.append((delta, 1, True))
        return out

    def distance(self, a: int, b: int) -> int:
        return sum(s for s, _, _ in self.offsets(a, b))

    def mesh_distance(self, a: int, b: int) -> int:
        ca, cb = self.coord(a), self.coord(b)
        return sum(abs(p - q) for p, q in zip(ca, cb))

    # -- endpoints -------------------------------------------------------

    def gcs(self, n: int) -> list[tuple]:
        return [("G", n, u, v, k) for v in range(self.V) for u in range(self.U) for k in (0, 1)]

    def icbs(self, n: int) -> list[tuple]:
        return [("I", n, s, r) for s in range(self.cfg.slices) for r in range(self.V)]

    def nearest_side(self, u: int) -> int:
        if self.cfg.slices == 1:
            return 0
        return 0 if 2 * u < self.U else 1

    def attach(self, ep: tuple) -> tuple[tuple, str]:
        """(router, port) an endpoint injects into and is ejected from."""
        if ep[0] == "G":
            _, n, u, v, k = ep
            return ("C", n, u, v), f"g{k}"
        if ep[0] == "I":
            _, n, s, r = ep
            return ("E", n, s, 2, r), "icb"
        raise ValueError(f"not an endpoint: {ep!r}")

    # -- wiring ----------------------------------------------------------

    def downstream(self, comp: tuple, port: str) -> tuple[tuple, str]:
        key = (comp, port)
        hit = self._wiring.get(key)
        if hit is None:
            hit = self._wiring[key] = self._downstream(comp, port)
        return hit

    def _downstream(self, comp: tuple, port: str) -> tuple[tuple, str]:
        kind = comp[0]
        if kind == "C":
            _, n, u, v = comp
            if port == "U+":
                return (("C", n, u + 1, v), "U-") if u + 1 < self.U else (("R", n, 1, v), "core")
            if port == "U-":
                return (("C", n, u - 1, v), "U+") if u > 0 else (("R", n, 0, v), "core")
            if port == "V+":
                return ("C", n, u, v + 1), "V-"
            if port == "V-":
                return ("C", n, u, v - 1), "V+"
            if port in ("g0", "g1"):
                return ("G", n, u, v, int(port[1])), "in"
        elif kind == "R":
            _, n, s, r = comp
            if port == "edge":
                return ("E", n, s, 2, r), "ra"
            if port == "core":
                return (("C", n, 0, r), "U-") if s == 0 else (("C", n, self.U - 1, r), "U+")
        elif kind == "E":
            _, n, s, c, r = comp
            if port == "O":
                return ("E", n, s, c - 1, r), "I"
            if port == "I":
                return ("E", n, s, c + 1, r), "O"
            if port == "N":
                return ("E", n, s, c, r - 1), "S"
            if port == "S":
                return ("E", n, s, c, r + 1), "N"
            if port == "ch":
                return ("L", n, s, self.row_channel[r]), "in"
            if port == "ra":
                return ("R", n, s, r), "edge"
            if port == "icb":
                return ("I", n, s, r), "in"
        elif kind == "L":
            _, n, s, d = comp
            m = self.neighbor(n, d)
            return ("E", m, s, 0, self.channel_row[opposite(d)]), "ch"
        raise ValueError(f"no port {port!r} on {comp!r}")

    # -- route pieces ----------------------------------------------------

    def core_path(self, n: int, u: int, v: int, target: tuple) -> list[tuple[tuple, str]]:
        """U-then-V dimension-order path starting at core router (u, v).

        ``target`` is ("tile", u, v, k) or ("edge", side).
        """
        hops = []
        if target[0] == "edge":
            side = target[1]
            step = -1 if side == 0 else 1
            port = "U-" if side == 0 else "U+"
            while True:
                hops.append((("C", n, u, v), port))
                u += step
                if u < 0 or u >= self.U:
                    return hops
        _, tu, tv, k = target
        while u != tu:
            port = "U+" if tu > u else "U-"
            hops.append((("C", n, u, v), port))
            u += 1 if tu > u else -1
        while v != tv:
            port = "V+" if tv > v else "V-"
            hops.append((("C", n, u, v), port))
            v += 1 if tv > v else -1
        hops.append((("C", n, u, v), f"g{k}"))
        return hops

    def edge_path(self, n: int, s: int, col: int, row: int, exit_col: int, exit_row: int, exit_port: str, via: int) -> list[tuple[tuple, str]]:
        """Column-row-column path inside one side's edge network."""
        hops = []
        c, r = col, row
        while c != via:
            port = "I" if via > c else "O"
            hops.append((("E", n, s, c, r), port))
            c += 1 if via > c else -1
        while r != exit_row:
            port = "S" if exit_row > r else "N"
            hops.append((("E", n, s, c, r), port))
            r += 1 if exit_row > r else -1
        while c != exit_col:
            port = "I" if exit_col > c else "O"
            hops.append((("E", n, s, c, r), port))
            c += 1 if exit_col > c else -1
        hops.append((("E", n, s, c, r), exit_port))
        return hops

    def select_dimension_order(self, response: bool, rng) -> tuple[int, int, int]:
        if response:
            return XYZ
        return ORDERS[rng.randrange(6)]

    def torus_dirs(self, a: int, b: int, choice: RouteChoice, response: bool = False) -> list[int]:
        """Direction indices of every inter-node hop, in travel order."""
        if response:
            ca, cb = self.coord(a), self.coord(b)
            out = []
            for dim in XYZ:
                delta = cb[dim] - ca[dim]
                out += [dir_index(dim, 1 if delta > 0 else -1)] * abs(delta)
            return out
        offs = self.offsets(a, b)
        out = []
        for dim in choice.order:
            steps, sign, tie = offs[dim]
            if tie:
                sign = choice.ties[dim]
            out += [dir_index(dim, sign)] * steps
        return out

    def route(self, src: tuple, dst: tuple, choice: RouteChoice, response: bool = False) -> Route:
        """Full hop list from endpoint ``src`` to endpoint ``dst``."""
        n0 = src[1]
        n1 = dst[1]
        dirs = self.torus_dirs(n0, n1, choice, response)
        core_vc = CORE_RESP_VC if response else CORE_REQ_VC
        hops: list = []

        def add(pairs, vc):
            hops.extend((comp, port, vc) for comp, port in pairs)

        # same node, GC to GC: core network only
        if not dirs and src[0] == "G" and dst[0] == "G":
            _, _, u, v, _ = src
            add(self.core_path(n0, u, v, ("tile", dst[2], dst[3], dst[4])), core_vc)
            return Route(hops, src, dst, [n0], [], response)

        if dst[0] == "I":
            side = dst[2]
        elif src[0] == "I":
            side = src[2]
        elif choice.side is not None and self.cfg.slices > 1:
            side = choice.side
        else:
            side = self.nearest_side(src[2])

        edge_vc = RESPONSE_VC if response else choice.balance
        col_i = 0
        # source node: reach the edge network
        if src[0] == "G":
            _, _, u, v, _ = src
            add(self.core_path(n0, u, v, ("edge", side)), core_vc)
            hops.append((("R", n0, side, v), "edge", edge_vc))
            col, row = 2, v
        else:
            col, row = 2, src[3]

        node = n0
        links = []
        node_path = [n0]
        cur_dim = None
        dateline = 0
        for i, d in enumerate(dirs):
            dim = DIRS[d][0]
            through = i > 0 and d == dirs[i - 1]
            via = 0 if through else choice.column(col_i)
            if not through:
                col_i += 1
            pairs = self.edge_path(node, side, col, row, 0, self.channel_row[d], "ch", via)
            add(pairs, edge_vc)
            if dim != cur_dim:
                cur_dim, dateline = dim, 0
            wrap = self.crosses_wrap(node, d)
            if wrap:
                dateline = 1
            link_vc = RESPONSE_VC if response else 2 * dateline + choice.balance
            hops.append((("L", node, side, d), "out", link_vc))
            links.append((node, side, d, wrap))
            edge_vc = link_vc
            node = self.neighbor(node, d)
            node_path.append(node)
            col, row = 0, self.channel_row[opposite(d)]

        # destination node
        if dst[0] == "I":
            _, _, s, r = dst
            add(self.edge_path(node, side, col, row, 2, r, "icb", choice.column(col_i)), edge_vc)
        else:
            add(self.edge_path(node, side, col, row, 2, row, "ra", choice.column(col_i)), edge_vc)
            hops.append((("R", node, side, row), "core", core_vc))
            start_u = 0 if side == 0 else self.U - 1
            add(self.core_path(node, start_u, row, ("tile", dst[2], dst[3], dst[4])), core_vc)
        return Route(hops, src, dst, node_path, links, response)

    # -- enumeration -----------------------------------------------------

    def all_choices(self, src: tuple, dst: tuple, response: bool = False) -> Iterator[RouteChoice]:
        """Every distinct RouteChoice that can matter for ``src -> dst``."""
        if response:
            sides = range(self.cfg.slices) if src[1] != dst[1] else (None,)
            for side in sides:
                for columns in itertools.product(INNER_COLUMNS, repeat=4):
                    yield RouteChoice(side=side, columns=columns)
            return
        n0, n1 = src[1], dst[1]
        offs = self.offsets(n0, n1)
        tie_opts = [(1, -1) if offs[d][2] else (1,) for d in range(3)]
        moving = [d for d in range(3) if offs[d][0]]
        orders = sorted({tuple(o for o in order if o in moving) for order in ORDERS})
        sides = range(self.cfg.slices) if n0 != n1 else (None,)
        for sub_order in orders:
            order = tuple(sub_order) + tuple(d for d in range(3) if d not in sub_order)
            ncol = len(moving) + 1
            for ties in itertools.product(*tie_opts):
                for side in sides:
                    for balance in (0, 1):
                        for columns in itertools.product(INNER_COLUMNS, repeat=ncol):
                            yield RouteChoice(order, ties, side, balance, columns)

    def random_choice(self, rng, response: bool = False) -> RouteChoice:
        order = self.select_dimension_order(response, rng)
        ties = tuple(rng.choice((1, -1)) for _ in range(3))
        balance = rng.randrange(2)
        columns = tuple(rng.choice(INNER_COLUMNS) for _ in range(4))
        side = rng.randrange(self.cfg.slices)
        return RouteChoice(order, ties, side, balance, columns)


def vc_assign(response: bool, dateline_bit: int, balance_bit: int) -> int:
    return RESPONSE_VC if response else 2 * dateline_bit + balance_bit


def core_route(cur: tuple[int, int], target: tuple, U: int) -> str:
    """Next core output port from tile ``cur`` (U resolved before V)."""
    u, v = cur
    if target[0] == "edge":
        return "U-" if target[1] == 0 else "U+"
    _, tu, tv, k = target
    if tu != u:
        return "U+" if tu > u else "U-"
    if tv != v:
        return "V+" if tv > v else "V-"
    return f"g{k}"
