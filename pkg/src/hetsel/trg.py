"""Trigger bus: event collection, filtered delivery, temporal correlation, UCI registry.

Producers publish :class:`Event` values; the bus evaluates every live
subscription (type pattern, source, payload predicates, rate limit) and hands
matching consumers a :class:`Trigger` synchronously, in subscription-creation
order.  Correlation rules watch the event stream and publish synthetic
triggers through the same path.  Delivery is fully synchronous so that a run
embedding the bus stays deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Optional

logger = logging.getLogger(__name__)

# Reserved event type strings.  The vocabulary is open: components may publish
# further types without touching this module.
LINK_UP = "link-up"
LINK_DOWN = "link-down"
ATTACH_FAILED = "attach-failed"
NEW_ACCESS_DETECTED = "new-access-detected"
ACCESS_LOST = "access-lost"
LINK_QUALITY_REPORT = "link-quality-report"
MEASUREMENT_BATCH = "measurement-batch"
SCAN_COMPLETE = "scan-complete"
CANDIDATE_REPORT = "candidate-report"
HANDOVER_EXECUTION_REQUEST = "handover-execution-request"
HANDOVER_COMPLETE = "handover-complete"
HANDOVER_FAILED = "handover-failed"
QOS_UNSATISFIED = "qos-unsatisfied"
POLICY_CHANGED = "policy-changed"
POLICIES_CHECK_REQUEST = "policies-check-request"
POLICIES_CHECK_ANSWER = "policies-check-answer"
ROUTER_ADVERTISEMENT = "router-advertisement"
CELL_COVERAGE_CHANGE = "cell-coverage-change"
FLOW_ARRIVAL = "flow-arrival"
FLOW_DEPARTURE = "flow-departure"
FLOW_MAPPED = "flow-mapped"
REPORTING_INTERVAL_CHANGE = "reporting-interval-change"
RUN_END = "run-end"

#: Comparator spellings accepted in payload predicates (ASCII and symbol forms).
COMPARATORS = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "≠": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "≤": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "≥": lambda a, b: a >= b,
}

# Nested synthetic publications deeper than this are dropped (mis-configured
# correlation rules could otherwise recurse without bound).
_MAX_PUBLISH_DEPTH = 16


class SubscriptionError(ValueError):
    """Malformed subscription (bad predicate, empty consumer id)."""


class UnknownHandleError(KeyError):
    """Unsubscribe of a handle that is not live."""


class CorrelationRuleError(ValueError):
    """Malformed correlation rule."""


class UciConflictError(ValueError):
    """UCI already registered by a different source."""


class UciNotFoundError(KeyError):
    """UCI lookup miss."""


@dataclass(frozen=True)
class Event:
    """A typed, timestamped notification with flat named attributes."""

    event_type: str
    source: str
    at: int = 0
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Trigger(Event):
    """An event as delivered to one consumer."""

    synthetic: bool = False
    delivered_to: str = ""


@dataclass(frozen=True)
class Subscription:
    """Filter owned by one consumer.

    ``accepted_types`` entries are exact event types or prefixes with a
    trailing ``*``.  ``payload_predicates`` are ``(attribute, comparator,
    constant)`` triples; a predicate on a missing attribute is false.
    ``min_interval_ms`` rate-limits deliveries: events arriving sooner than
    the interval after the last delivery are silently skipped.
    """

    consumer_id: str
    accepted_types: tuple[str, ...]
    source_filter: Optional[str] = None
    payload_predicates: tuple[tuple[str, str, Any], ...] = ()
    min_interval_ms: Optional[int] = None


@dataclass(frozen=True)
class CorrelationRule:
    """Ordered event-type pattern that fires a synthetic trigger.

    Matching is an ordered subsequence anchored at the first matched element:
    unrelated events in between are allowed, the partial match expires once
    ``window_ms`` has elapsed after the anchor, and ``reset_on_fire`` clears
    the state after each firing.
    """

    rule_id: str
    pattern: tuple[str, ...]
    window_ms: int
    output_type: str
    reset_on_fire: bool = True


@dataclass(frozen=True)
class UciRecord:
    """Registry entry naming a multiaccess information source."""

    uci: str
    source: str
    description: str = ""


def _type_matches(pattern: str, event_type: str) -> bool:
    if pattern.endswith("*"):
        return event_type.startswith(pattern[:-1])
    return pattern == event_type


def _predicate_holds(predicate: tuple[str, str, Any], payload: dict[str, Any]) -> bool:
    attribute, comparator, constant = predicate
    if attribute not in payload:
        return False
    try:
        return COMPARATORS[comparator](payload[attribute], constant)
    except TypeError:
        return False


class _LiveSubscription:
    __slots__ = ("spec", "callback", "handle", "last_delivery_at")

    def __init__(self, spec: Subscription, callback: Callable[[Trigger], None], handle: int):
        self.spec = spec
        self.callback = callback
        self.handle = handle
        self.last_delivery_at: Optional[int] = None

    def matches(self, event: Event) -> bool:
        spec = self.spec
        if not any(_type_matches(p, event.event_type) for p in spec.accepted_types):
            return False
        if spec.source_filter is not None and event.source != spec.source_filter:
            return False
        return all(_predicate_holds(p, event.payload) for p in spec.payload_predicates)

    def rate_limited(self, now: int) -> bool:
        if self.spec.min_interval_ms is None or self.last_delivery_at is None:
            return False
        return now - self.last_delivery_at < self.spec.min_interval_ms


class _RuleState:
    __slots__ = ("rule", "next_index", "anchor_at")

    def __init__(self, rule: CorrelationRule):
        self.rule = rule
        self.next_index = 0
        self.anchor_at: Optional[int] = None

    def reset(self) -> None:
        self.next_index = 0
        self.anchor_at = None

    def advance(self, event: Event) -> bool:
        """Feed one event; return True when the pattern completes."""
        rule = self.rule
        if self.anchor_at is not None and event.at - self.anchor_at > rule.window_ms:
            self.reset()
        if event.event_type != rule.pattern[self.next_index]:
            return False
        if self.next_index == 0:
            self.anchor_at = event.at
        self.next_index += 1
        if self.next_index < len(rule.pattern):
            return False
        if rule.reset_on_fire:
            self.reset()
        else:
            # Stay armed on the final element so trailing repeats re-fire
            # inside the window.
            self.next_index = len(rule.pattern) - 1
        return True


class TriggerBus:
    """Synchronous in-process trigger bus with a local UCI registry.

    ``clock`` supplies the current sim time stamped onto published events.
    ``recorder``, when given, is called as ``recorder(at, kind, attrs)`` for
    every publish (kind ``event``) and delivery (kind ``delivery``).
    """

    def __init__(
        self,
        clock: Callable[[], int] = lambda: 0,
        recorder: Optional[Callable[[int, str, dict[str, Any]], None]] = None,
        drop_types: Iterable[str] = (),
    ):
        self._clock = clock
        self._recorder = recorder
        self._drop_types = tuple(drop_types)
        self._subscriptions: dict[int, _LiveSubscription] = {}
        self._by_spec: dict[Subscription, int] = {}
        self._next_handle = 1
        self._rules: dict[int, _RuleState] = {}
        self._next_rule_handle = 1
        self._registry: dict[str, UciRecord] = {}
        self._depth = 0
        self.published = 0
        self.delivered = 0

    # -- subscriptions ----------------------------------------------------

    def subscribe(self, spec: Subscription, callback: Callable[[Trigger], None]) -> int:
        """Register a subscription; duplicate (consumer, identical filter) is idempotent."""
        if not spec.consumer_id:
            raise SubscriptionError("consumer_id must be non-empty")
        if not spec.accepted_types:
            raise SubscriptionError("accepted_types must be non-empty")
        for predicate in spec.payload_predicates:
            if len(predicate) != 3 or predicate[1] not in COMPARATORS:
                raise SubscriptionError(f"malformed predicate: {predicate!r}")
        if spec.min_interval_ms is not None and spec.min_interval_ms <= 0:
            raise SubscriptionError("min_interval_ms must be positive")
        existing = self._by_spec.get(spec)
        if existing is not None:
            return existing
        handle = self._next_handle
        self._next_handle += 1
        self._subscriptions[handle] = _LiveSubscription(spec, callback, handle)
        self._by_spec[spec] = handle
        return handle

    def unsubscribe(self, handle: int) -> None:
        live = self._subscriptions.pop(handle, None)
        if live is None:
            raise UnknownHandleError(handle)
        del self._by_spec[live.spec]

    def has_consumer(self, consumer_id: str) -> bool:
        return any(s.spec.consumer_id == consumer_id for s in self._subscriptions.values())

    # -- publication -------------------------------------------------------

    def publish(self, event: Event) -> int:
        """Deliver to matching subscriptions; returns the delivery count.

        Bus-level drop rules apply before anything else.  Correlation rules
        advance after the deliveries; completed patterns publish their
        synthetic trigger recursively through this same method.
        """
        event = replace(event, at=self._clock())
        if any(_type_matches(p, event.event_type) for p in self._drop_types):
            return 0
        if self._depth >= _MAX_PUBLISH_DEPTH:
            logger.warning("publish depth limit reached, dropping %s", event.event_type)
            return 0
        self._depth += 1
        try:
            self.published += 1
            self._record(event.at, "event", {
                "type": event.event_type,
                "source": event.source,
                "synthetic": isinstance(event, Trigger) and event.synthetic,
                **event.payload,
            })
            count = 0
            for live in list(self._subscriptions.values()):
                if not live.matches(event) or live.rate_limited(event.at):
                    continue
                live.last_delivery_at = event.at
                trigger = Trigger(
                    event_type=event.event_type,
                    source=event.source,
                    at=event.at,
                    payload=event.payload,
                    synthetic=isinstance(event, Trigger) and event.synthetic,
                    delivered_to=live.spec.consumer_id,
                )
                count += 1
                self.delivered += 1
                self._record(event.at, "delivery", {
                    "consumer": live.spec.consumer_id,
                    "type": event.event_type,
                    "source": event.source,
                    "synthetic": trigger.synthetic,
                })
                live.callback(trigger)
            for fired in self._advance_rules(event):
                self.publish(fired)
            return count
        finally:
            self._depth -= 1

    def send_downward(self, event: Event, target: str) -> int:
        """Publish an upper-layer trigger aimed at ``mrrm`` or ``gll``.

        Routing happens through ordinary subscriptions; the only visible
        difference is the event's source naming the upper-layer producer.
        """
        if target not in ("mrrm", "gll"):
            raise ValueError(f"unknown downward target: {target}")
        if not self.has_consumer(target):
            raise SubscriptionError(f"target {target} has no live subscription")
        return self.publish(event)

    def _advance_rules(self, event: Event) -> list[Trigger]:
        fired: list[Trigger] = []
        for state in self._rules.values():
            if state.advance(event):
                fired.append(Trigger(
                    event_type=state.rule.output_type,
                    source="trg",
                    payload={"rule": state.rule.rule_id, "completed_by": event.event_type},
                    synthetic=True,
                ))
        return fired

    def _record(self, at: int, kind: str, attrs: dict[str, Any]) -> None:
        if self._recorder is not None:
            self._recorder(at, kind, attrs)

    # -- correlation -------------------------------------------------------

    def define_correlation(self, rule: CorrelationRule) -> int:
        if len(rule.pattern) < 2:
            raise CorrelationRuleError("pattern length must be >= 2")
        if rule.window_ms <= 0:
            raise CorrelationRuleError("window_ms must be positive")
        handle = self._next_rule_handle
        self._next_rule_handle += 1
        self._rules[handle] = _RuleState(rule)
        return handle

    def drop_correlation(self, handle: int) -> None:
        if self._rules.pop(handle, None) is None:
            raise UnknownHandleError(handle)

    # -- UCI registry --------------------------------------------------------

    def register_uci(self, record: UciRecord) -> None:
        """Store a record; same (uci, source) is idempotent, same uci with a
        different source is a conflict."""
        if not record.uci:
            raise ValueError("uci must be non-empty")
        existing = self._registry.get(record.uci)
        if existing is not None and existing.source != record.source:
            raise UciConflictError(record.uci)
        self._registry[record.uci] = record

    def resolve_uci(self, uci: str) -> UciRecord:
        try:
            return self._registry[uci]
        except KeyError:
            raise UciNotFoundError(uci) from None


@dataclass(frozen=True)
class PolicyRecord:
    """Stored operator policy used for policies-check answers."""

    verdict: str  # allow | deny
    preference: Optional[float] = None


class PoliciesCheckResponder:
    """Answers policies-check-request events from a local policy store.

    Operators without a stored record get the configured default verdict.
    Disable responding (scenario configuration) to exercise the requesting
    side's timeout handling.
    """

    def __init__(
        self,
        bus: TriggerBus,
        store: Optional[dict[str, PolicyRecord]] = None,
        default_verdict: str = "allow",
    ):
        if default_verdict not in ("allow", "deny"):
            raise ValueError(f"unknown default verdict {default_verdict!r}")
        self.bus = bus
        self.store = store or {}
        self.default_verdict = default_verdict
        bus.subscribe(
            Subscription(consumer_id="trg", accepted_types=(POLICIES_CHECK_REQUEST,)),
            self._answer,
        )

    def _answer(self, t: Trigger) -> None:
        operator = t.payload.get("operator", "")
        record = self.store.get(operator)
        payload: dict[str, Any] = {
            "operator": operator,
            "verdict": record.verdict if record else self.default_verdict,
        }
        if record is not None and record.preference is not None:
            payload["preference"] = record.preference
        self.bus.publish(Event(POLICIES_CHECK_ANSWER, "trg", payload=payload))
