import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusnet.packet import (
    Endpoint,
    Flit,
    HeaderError,
    NodeCoord,
    PacketHeader,
    PType,
    Quad,
    TClass,
    TileCoord,
    WriteMode,
    decode_header,
    encode_header,
    packet_flits,
)


@st.composite
def headers(draw):
    ptype = draw(st.sampled_from(list(PType)))
    tclass = TClass.REQUEST if ptype == PType.FENCE else draw(st.sampled_from(list(TClass)))
    return PacketHeader(
        ptype=ptype,
        tclass=tclass,
        dest_node=NodeCoord(*(draw(st.integers(0, 31)) for _ in range(3))),
        dest_tile=TileCoord(draw(st.integers(0, 31)), draw(st.integers(0, 15)), draw(st.sampled_from(list(Endpoint)))),
        vc=draw(st.integers(0, 7)),
        hop_budget=draw(st.integers(0, 31)),
        fence_id=draw(st.integers(0, 13)),
        seq=draw(st.integers(0, 0xFFFF)),
        continuation=draw(st.booleans()),
        mode=draw(st.sampled_from(list(WriteMode))),
    )


def test_default_header_is_zero_word():
    assert encode_header(PacketHeader()) == 0
    assert decode_header(0) == PacketHeader()


@given(headers())
def test_header_roundtrip(h):
    w = encode_header(h)
    assert 0 <= w < 1 << 64
    assert decode_header(w) == h


def test_header_bijective_on_small_subrange():
    seen = {}
    for ptype in PType:
        for vc in range(8):
            for x in range(4):
                for budget in range(4):
                    h = PacketHeader(ptype=ptype, vc=vc, dest_node=NodeCoord(x, 0, 0), hop_budget=budget)
                    w = encode_header(h)
                    assert w not in seen
                    seen[w] = h
    assert all(decode_header(w) == h for w, h in seen.items())


def test_dest_outside_torus_names_field():
    h = PacketHeader(dest_node=NodeCoord(4, 0, 0))
    with pytest.raises(HeaderError, match="dest_node.x"):
        encode_header(h, torus=(4, 4, 8))
    with pytest.raises(HeaderError, match="x=32"):
        encode_header(PacketHeader(dest_node=NodeCoord(32, 0, 0)))


def test_fence_id_window_and_reserved_bits():
    with pytest.raises(HeaderError, match="fence_id"):
        encode_header(PacketHeader(fence_id=14))
    with pytest.raises(HeaderError, match="reserved"):
        decode_header(1 << 62)


def test_undefined_ptype_rejected():
    with pytest.raises(HeaderError):
        decode_header(7)


def test_fence_must_be_request_class():
    with pytest.raises(HeaderError):
        PacketHeader(ptype=PType.FENCE, tclass=TClass.RESPONSE)


def test_flit_widths():
    h = PacketHeader(ptype=PType.FORCE, seq=9)
    f = Flit(h, Quad(1, -2, 3, -4))
    raw = f.to_bytes()
    assert len(raw) * 8 == 192
    assert len(Quad(-1, 0, 0, 0).to_bytes()) * 8 == 128
    assert Flit.from_bytes(raw) == f


def test_two_flit_packet_shares_header():
    h = PacketHeader(ptype=PType.REQUEST_WRITE, seq=5)
    flits = packet_flits(h, [Quad(1), Quad(2)])
    assert [f.header.continuation for f in flits] == [False, True]
    assert flits[1].header.seq == h.seq
    with pytest.raises(ValueError):
        packet_flits(h, [Quad()] * 3)


@given(st.integers(-(2**40), 2**40))
def test_quad_normalizes_to_signed32(w):
    q = Quad(w)
    assert -(2**31) <= q.w0 < 2**31
    assert (q.w0 - w) % (1 << 32) == 0
    assert Quad.from_bytes(q.to_bytes()) == q
