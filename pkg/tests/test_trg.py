"""Trigger bus: filtering, delivery order, correlation, UCI registry."""

import random

import pytest

from hetsel import trg
from hetsel.trg import (
    CorrelationRule,
    Event,
    PoliciesCheckResponder,
    PolicyRecord,
    Subscription,
    SubscriptionError,
    TriggerBus,
    UciConflictError,
    UciNotFoundError,
    UciRecord,
    UnknownHandleError,
)

from oracles import correlation_fires


class Clock:
    def __init__(self):
        self.now = 0

    def __call__(self):
        return self.now


def collector():
    received = []
    return received, received.append


def test_prefix_pattern_matches():
    bus = TriggerBus()
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("link-*",)), cb)
    assert bus.publish(Event("link-down", "gll")) == 1
    assert received[0].event_type == "link-down"
    assert received[0].delivered_to == "c1"


def test_type_mismatch_not_delivered():
    bus = TriggerBus()
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("handover-complete",)), cb)
    assert bus.publish(Event("link-down", "gll")) == 0
    assert received == []


def test_payload_predicate_comparators():
    bus = TriggerBus()
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("candidate-report",),
                               payload_predicates=(("quality", "<", 0.2),)), cb)
    assert bus.publish(Event("candidate-report", "mrrm", payload={"quality": 0.15})) == 1
    assert bus.publish(Event("candidate-report", "mrrm", payload={"quality": 0.25})) == 0


def test_predicate_on_missing_attribute_is_false():
    bus = TriggerBus()
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("x",), payload_predicates=(("v", "=", 1),)), cb)
    assert bus.publish(Event("x", "s")) == 0


def test_source_filter():
    bus = TriggerBus()
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("x",), source_filter="gll"), cb)
    assert bus.publish(Event("x", "gll")) == 1
    assert bus.publish(Event("x", "mrrm")) == 0


def test_malformed_predicate_rejected():
    bus = TriggerBus()
    with pytest.raises(SubscriptionError):
        bus.subscribe(Subscription("c1", ("x",), payload_predicates=(("v", "~", 1),)),
                      lambda t: None)


def test_duplicate_subscription_is_idempotent():
    bus = TriggerBus()
    received, cb = collector()
    spec = Subscription("c1", ("x",))
    h1 = bus.subscribe(spec, cb)
    h2 = bus.subscribe(Subscription("c1", ("x",)), cb)
    assert h1 == h2
    assert bus.publish(Event("x", "s")) == 1


def test_unsubscribe_stops_delivery_and_isolates_others():
    bus = TriggerBus()
    got1, cb1 = collector()
    got2, cb2 = collector()
    h1 = bus.subscribe(Subscription("c1", ("x",)), cb1)
    bus.subscribe(Subscription("c2", ("x",)), cb2)
    bus.unsubscribe(h1)
    assert bus.publish(Event("x", "s")) == 1
    assert got1 == [] and len(got2) == 1
    with pytest.raises(UnknownHandleError):
        bus.unsubscribe(h1)


def test_delivery_order_is_subscription_creation_order():
    bus = TriggerBus()
    order = []
    for i in range(100):
        bus.subscribe(Subscription(f"c{i}", ("x",)),
                      lambda t, i=i: order.append(i))
    assert bus.publish(Event("x", "s")) == 100
    assert order == list(range(100))


def test_rate_limit_skips_events_inside_interval():
    clock = Clock()
    bus = TriggerBus(clock=clock)
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("x",), min_interval_ms=500), cb)
    clock.now = 0
    assert bus.publish(Event("x", "s")) == 1
    clock.now = 100
    assert bus.publish(Event("x", "s")) == 0
    clock.now = 500
    assert bus.publish(Event("x", "s")) == 1  # boundary inclusive


def test_drop_rules_apply_before_subscriptions():
    bus = TriggerBus(drop_types=("noise-*",))
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("noise-a",)), cb)
    assert bus.publish(Event("noise-a", "s")) == 0
    assert received == []


# -- correlation ------------------------------------------------------------


def test_correlation_fires_within_window():
    clock = Clock()
    bus = TriggerBus(clock=clock)
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("link-flap",)), cb)
    bus.define_correlation(CorrelationRule("r1", ("link-down", "link-up"), 1000, "link-flap"))
    clock.now = 0
    bus.publish(Event("link-down", "gll"))
    clock.now = 400
    bus.publish(Event("link-up", "gll"))
    assert len(received) == 1
    assert received[0].synthetic is True
    assert received[0].at == 400


def test_correlation_window_expiry():
    clock = Clock()
    bus = TriggerBus(clock=clock)
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("link-flap",)), cb)
    bus.define_correlation(CorrelationRule("r1", ("link-down", "link-up"), 1000, "link-flap"))
    clock.now = 0
    bus.publish(Event("link-down", "gll"))
    clock.now = 1500
    bus.publish(Event("link-up", "gll"))
    assert received == []


def test_correlation_respects_order():
    clock = Clock()
    bus = TriggerBus(clock=clock)
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("ab",)), cb)
    bus.define_correlation(CorrelationRule("r1", ("a", "b"), 1000, "ab"))
    for at, etype in ((0, "b"), (10, "a"), (20, "b")):
        clock.now = at
        bus.publish(Event(etype, "s"))
    assert [t.at for t in received] == [20]


def test_intervening_unrelated_events_allowed():
    clock = Clock()
    bus = TriggerBus(clock=clock)
    received, cb = collector()
    bus.subscribe(Subscription("c1", ("ab",)), cb)
    bus.define_correlation(CorrelationRule("r1", ("a", "b"), 1000, "ab"))
    for at, etype in ((0, "a"), (10, "zzz"), (20, "b")):
        clock.now = at
        bus.publish(Event(etype, "s"))
    assert len(received) == 1


def test_synthetic_flag_integrity():
    clock = Clock()
    bus = TriggerBus(clock=clock)
    everything, cb = collector()
    bus.subscribe(Subscription("c1", ("*",)), cb)
    bus.define_correlation(CorrelationRule("r1", ("a", "b"), 1000, "ab"))
    for at, etype in ((0, "a"), (10, "b")):
        clock.now = at
        bus.publish(Event(etype, "s"))
    by_type = {t.event_type: t.synthetic for t in everything}
    assert by_type == {"a": False, "b": False, "ab": True}


def test_correlation_against_oracle_on_random_strings():
    rng = random.Random(4242)
    alphabet = ["a", "b", "c", "d"]
    for trial in range(300):
        pattern = tuple(rng.choice(alphabet) for _ in range(rng.randint(2, 3)))
        window = rng.choice([5, 20, 100])
        events = []
        at = 0
        for _ in range(rng.randint(0, 12)):
            at += rng.randint(1, 40)
            events.append((at, rng.choice(alphabet)))
        clock = Clock()
        bus = TriggerBus(clock=clock)
        fired = []
        bus.subscribe(Subscription("c1", ("out",)), lambda t: fired.append(t.at))
        bus.define_correlation(CorrelationRule("r", pattern, window, "out"))
        for at, etype in events:
            clock.now = at
            bus.publish(Event(etype, "s"))
        expected = correlation_fires(pattern, window, events)
        assert fired == expected, (pattern, window, events)


# -- UCI registry ---------------------------------------------------------------


def test_register_and_resolve():
    bus = TriggerBus()
    record = UciRecord("multiaccess/candidates", "mrrm", "candidate set")
    bus.register_uci(record)
    assert bus.resolve_uci("multiaccess/candidates") == record


def test_reregistration_same_source_is_idempotent():
    bus = TriggerBus()
    bus.register_uci(UciRecord("u1", "mrrm"))
    bus.register_uci(UciRecord("u1", "mrrm", "updated text"))
    assert bus.resolve_uci("u1").description == "updated text"


def test_conflicting_source_rejected():
    bus = TriggerBus()
    bus.register_uci(UciRecord("u1", "mrrm"))
    with pytest.raises(UciConflictError):
        bus.register_uci(UciRecord("u1", "gll"))


def test_unknown_uci_not_found():
    bus = TriggerBus()
    with pytest.raises(UciNotFoundError):
        bus.resolve_uci("ghost")


def test_registry_does_not_survive_across_buses():
    bus1 = TriggerBus()
    bus1.register_uci(UciRecord("u1", "mrrm"))
    bus2 = TriggerBus()
    with pytest.raises(UciNotFoundError):
        bus2.resolve_uci("u1")


# -- downward triggers -------------------------------------------------------------


def test_send_downward_uses_normal_delivery_path():
    bus = TriggerBus()
    received, cb = collector()
    bus.subscribe(Subscription("mrrm", ("policy-changed",)), cb)
    count = bus.send_downward(
        Event("policy-changed", "policy-editor",
              payload={"action": "deny-operator", "operator": "OpC"}),
        target="mrrm")
    assert count == 1
    assert received[0].source == "policy-editor"
    assert received[0].synthetic is False


def test_send_downward_requires_live_target():
    bus = TriggerBus()
    with pytest.raises(SubscriptionError):
        bus.send_downward(Event("policy-changed", "x"), target="gll")


# -- policies-check responder --------------------------------------------------------


def test_responder_answers_from_store_and_default():
    bus = TriggerBus()
    answers, cb = collector()
    bus.subscribe(Subscription("mrrm", (trg.POLICIES_CHECK_ANSWER,)), cb)
    PoliciesCheckResponder(bus, {"OpB": PolicyRecord("deny"),
                                 "OpC": PolicyRecord("allow", preference=0.9)},
                           default_verdict="allow")
    bus.publish(Event(trg.POLICIES_CHECK_REQUEST, "mrrm", payload={"operator": "OpB"}))
    bus.publish(Event(trg.POLICIES_CHECK_REQUEST, "mrrm", payload={"operator": "OpC"}))
    bus.publish(Event(trg.POLICIES_CHECK_REQUEST, "mrrm", payload={"operator": "OpX"}))
    got = [(t.payload["operator"], t.payload["verdict"], t.payload.get("preference"))
           for t in answers]
    assert got == [("OpB", "deny", None), ("OpC", "allow", 0.9), ("OpX", "allow", None)]
