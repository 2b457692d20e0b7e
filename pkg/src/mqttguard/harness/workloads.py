"""Synthetic rule sets and traffic for exercising the topic ACL at scale."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .. import frames as fb
from ..parser import RawFrame
from ..tables import AclRule, prefix_to_ternary

_WORDS = ("env", "dev", "ops", "sys", "tel", "fac", "lab", "grid", "home", "car", "farm", "port")
_LEAVES = ("temp", "hum", "co2", "volt", "amp", "state", "cmd", "fw", "log", "rssi")
_SUBNETS = ("10.0.0.0/8", "10.1.0.0/16", "10.2.0.0/16", "10.1.2.0/24", "0.0.0.0/0", "10.3.0.0/17")


@dataclass(frozen=True)
class AclWorkload:
    rules: tuple[AclRule, ...]
    clients: tuple[str, ...]
    topics: tuple[str, ...]


def _topic_prefix(rng: random.Random) -> str:
    depth = rng.choice((1, 1, 2, 2, 3))
    parts = [rng.choice(_WORDS) + str(rng.randrange(4)) for _ in range(depth)]
    text = "/".join(parts) + "/"
    # some rules stop mid-segment to exercise arbitrary prefix lengths
    if rng.random() < 0.2:
        text = text[: rng.randrange(1, len(text) + 1)]
    return text[:16]


def random_acl_rules(n: int = 100, seed: int = 0, deny_fraction: float = 0.5) -> list[AclRule]:
    """``n`` PUBLISH rules, ``round(n * deny_fraction)`` of them deny, with
    overlapping prefixes, sources, QoS sets and (deliberately) tied priorities."""
    rng = random.Random(seed)
    n_deny = int(round(n * deny_fraction))
    actions = ["deny"] * n_deny + ["permit"] * (n - n_deny)
    rng.shuffle(actions)
    rules = []
    for action in actions:
        prefix = _topic_prefix(rng)
        value, mask = prefix_to_ternary(prefix)
        if rng.random() < 0.1:
            # wildcard one byte in the middle: not expressible as a prefix
            pos = rng.randrange(len(prefix))
            mask = mask[:pos] + b"\x00" + mask[pos + 1:]
            value = value[:pos] + b"\x00" + value[pos + 1:]
        qos = frozenset(q for q in (0, 1, 2) if rng.random() < 0.7) or frozenset({rng.randrange(3)})
        rules.append(AclRule(src_prefix=rng.choice(_SUBNETS), topic_value=value, topic_mask=mask,
                             qos_set=qos, action=action, priority=rng.randrange(1, 40)))
    return rules


def _stem(rule: AclRule) -> str:
    # the rule's pattern with wildcard octets filled in, so topics built on it match
    width = max((i + 1 for i, m in enumerate(rule.topic_mask) if m), default=0)
    return "".join(chr(v) if m == 0xFF else "x" for v, m in zip(rule.topic_value[:width], rule.topic_mask))


def acl_workload(n_rules: int = 100, n_clients: int = 64, seed: int = 0) -> AclWorkload:
    rng = random.Random(seed + 1)
    rules = random_acl_rules(n_rules, seed)
    clients = []
    used = set()
    while len(clients) < n_clients:
        addr = f"10.{rng.choice((0, 1, 2, 3))}.{rng.choice((0, 2, 7, 130))}.{rng.randrange(1, 255)}"
        slot = fb.ip_to_int(addr) % 512
        if slot not in used:
            used.add(slot)
            clients.append(addr)
    topics = set()
    for rule in rules:
        stem = _stem(rule)
        for leaf in rng.sample(_LEAVES, 3):
            topics.add(stem + leaf)
        topics.add(stem + "/".join(rng.sample(_LEAVES, 3)))  # longer than the 16-byte window
    for _ in range(n_rules):
        topics.add(_topic_prefix(rng) + rng.choice(_LEAVES))  # mostly unmatched
    return AclWorkload(tuple(rules), tuple(clients), tuple(sorted(topics)))


def acl_frames(workload: AclWorkload, n_publish: int = 10_000, seed: int = 0, rate_pps: int = 1_000,
               start_ns: int = 1_700_000_000 * 1_000_000_000) -> list[RawFrame]:
    """One CONNECT (KeepAlive 0) per client, then ``n_publish`` PUBLISHes over
    random clients/topics/QoS, spaced ``1/rate_pps`` apart."""
    rng = random.Random(seed)
    out = []
    step = 1_000_000_000 // rate_pps
    ts = start_ns
    for n, addr in enumerate(workload.clients):
        out.append(RawFrame(fb.mqtt_frame(addr, fb.mqtt_connect(f"w{n}", 0), sport=30000 + n), ts))
        ts += step
    for i in range(n_publish):
        addr = rng.choice(workload.clients)
        qos = rng.randrange(3)
        mqtt = fb.mqtt_publish(rng.choice(workload.topics), rng.randbytes(rng.randrange(0, 48)), qos, i % 65535 + 1)
        out.append(RawFrame(fb.mqtt_frame(addr, mqtt, sport=30000 + workload.clients.index(addr)), ts))
        ts += step
    return out
