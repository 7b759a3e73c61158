import pytest
from hypothesis import given, strategies as st

from cbcast.core import (
    CounterPair,
    DecodeError,
    DonationBody,
    FrozenMap,
    MessageId,
    Notification,
    Packet,
    StampedMessage,
    VectorTime,
    WaitRecord,
    counter_total,
    decode,
    encode,
)

pids = st.sampled_from(["A", "B", "C", "D", "p00", "p17"])
counts = st.integers(min_value=0, max_value=10_000)
vts = st.dictionaries(pids, counts, min_size=1).map(VectorTime)
pairs = st.builds(CounterPair, counts, counts)


@st.composite
def messages(draw):
    orig = draw(pids)
    vt = draw(vts).set(orig, draw(st.integers(min_value=1, max_value=10_000)))
    return StampedMessage(draw(st.text(min_size=1, max_size=8)), orig, draw(counts), vt)


messages = messages()
records = st.builds(
    WaitRecord,
    messages,
    pairs,
    st.dictionaries(pids, pairs).map(FrozenMap),
    st.sampled_from(["bcast", "fwd"]),
)
bodies = st.builds(
    DonationBody,
    st.lists(records, max_size=4).map(tuple),
    st.dictionaries(pids, pairs).map(FrozenMap),
    counts,
    counts,
)
packets = st.one_of(
    st.builds(Packet, st.just("msg"), messages, counts),
    st.builds(Packet, st.just("ack"), messages.map(lambda m: m.id), counts),
    st.builds(Packet, st.sampled_from(["ghost", "flush"]), counts, counts),
    st.builds(Packet, st.sampled_from(["don", "codon"]), bodies, counts),
)


@given(packets)
def test_packet_round_trip(p):
    text = encode(p)
    assert decode(Packet, text) == p
    assert encode(decode(Packet, text)) == text


@given(records)
def test_wait_record_round_trip(r):
    assert decode(WaitRecord, encode(r)) == r


@given(vts, vts)
def test_leq_compares_shared_entries(a, b):
    assert a.leq(b) == all(a[k] <= b[k] for k in set(a) & set(b))
    assert a.leq(a)


def test_frozen_map_is_sorted_hashable_and_persistent():
    m = FrozenMap({"b": 1, "a": 2})
    assert list(m) == ["a", "b"]
    assert hash(m) == hash(FrozenMap({"a": 2, "b": 1}))
    m2 = m.set("c", 3).without("a")
    assert dict(m) == {"a": 2, "b": 1} and dict(m2) == {"b": 1, "c": 3}


def test_counter_pair_order_and_total():
    assert CounterPair(1, 5) < CounterPair(2, 0)
    assert counter_total(CounterPair(3, 4)) == 7


def test_message_id_is_stamp_plus_originator():
    m = StampedMessage("x", "A", 2, VectorTime({"A": 1, "B": 0}))
    assert m.id == MessageId(2, VectorTime({"A": 1, "B": 0}), "A")
    assert StampedMessage("other", "A", 2, VectorTime({"A": 1, "B": 0})).id == m.id


def test_packet_body_type_checked():
    with pytest.raises(TypeError):
        Packet("ghost", "3")
    with pytest.raises(DecodeError):
        Packet("bogus", 1)


@pytest.mark.parametrize("text", ["", "{", '{"k":"msg","b":{}}', '{"k":"nope","b":1}', "[]"])
def test_decode_rejects_garbage(text):
    with pytest.raises(DecodeError):
        decode(Packet, text)


def test_notification_validation():
    assert Notification.join("J", "A").to_obj() == {"k": "join", "pid": "J", "parent": "A"}
    with pytest.raises(ValueError):
        Notification("join", "J")
    with pytest.raises(ValueError):
        Notification("explode")
