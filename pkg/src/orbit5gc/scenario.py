"""
Scenario files: TOML documents describing links, data networks, the UE
roster and a procedure timeline. The schema is documented in
``docs/scenario-format.md``.
"""

from __future__ import annotations

import ipaddress
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .nas import is_valid_supi
from .satlink import ContactWindow, LinkProfile, normalize_windows
from .upf import DnTarget

SEED_ENV = "ORBIT5GC_SEED"
ACTIONS = ("register", "session", "release", "deregister", "traffic", "downlink")
LINK_NAMES = ("feeder", "ground", "isl")

DEFAULT_PROCESSING_US = {"amf": 500, "smf": 500, "upf": 500, "ue": 500, "gnb": 0}


class ConfigError(ValueError):
    """Invalid scenario; ``problems`` lists ``(field, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{f}: {m}" for f, m in problems))


@dataclass(frozen=True)
class LinkConfig:
    profile: LinkProfile
    windows: tuple[ContactWindow, ...] = ()
    policy: str = "queue"
    queue_limit: int = 1024


@dataclass(frozen=True)
class DataNetworkConfig:
    name: str
    target: DnTarget
    prefixes: tuple[ipaddress.IPv4Network, ...]


DEFAULT_DATA_NETWORKS = (
    DataNetworkConfig("internet", DnTarget.Ground, (ipaddress.IPv4Network("0.0.0.0/0"),)),
    DataNetworkConfig("onboard", DnTarget.Onboard, (ipaddress.IPv4Network("10.64.0.0/16"),)),
)


@dataclass(frozen=True)
class UeConfig:
    supi: str
    key: bytes
    gnb: int
    group: str | None = None


@dataclass(frozen=True)
class Action:
    at_us: int
    supi: str
    action: str
    params: dict = field(default_factory=dict, hash=False, compare=True)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    duration_us: int = 10_000_000
    cadence_us: int = 1_000_000
    links: dict[str, LinkConfig] = field(
        default_factory=lambda: {n: LinkConfig(LinkProfile()) for n in ("feeder", "ground")})
    processing_us: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_PROCESSING_US))
    data_networks: tuple[DataNetworkConfig, ...] = field(
        default_factory=lambda: DEFAULT_DATA_NETWORKS)
    pool: str = "10.45.0.0/16"
    auth_timeout_us: int = 6_000_000
    ue_timeout_us: int = 10_000_000
    retransmit_us: int | None = None
    max_retries: int = 3
    gnbs: tuple[int, ...] = (1,)
    ues: tuple[UeConfig, ...] = ()
    timeline: tuple[Action, ...] = ()

    @property
    def ticks(self) -> int:
        return math.ceil(self.duration_us / self.cadence_us)


def _us(seconds) -> int:
    return int(round(float(seconds) * 1_000_000))


class _Collector:
    def __init__(self):
        self.problems: list[tuple[str, str]] = []

    def add(self, where: str, msg: str) -> None:
        self.problems.append((where, msg))

    def get(self, table: dict, key: str, where: str, kind, default=None, required=False):
        if key not in table:
            if required:
                self.add(f"{where}.{key}" if where else key, "missing")
            return default
        value = table[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            self.add(f"{where}.{key}" if where else key,
                     f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
            return default
        return value


def _parse_link(c: _Collector, name: str, t: dict) -> LinkConfig | None:
    where = f"links.{name}"
    defaults = LinkProfile()
    kw = {}
    for key, kind in (("one_way_delay_us", int), ("jitter_stddev_us", float), ("loss_prob", float),
                      ("uplink_bps", float), ("downlink_bps", float), ("mtu", int),
                      ("reorder_allowed", bool)):
        kw[key] = c.get(t, key, where, kind, getattr(defaults, key))
    try:
        profile = LinkProfile(**kw)
    except ValueError as exc:
        c.add(where, str(exc))
        return None
    windows = ()
    raw = c.get(t, "windows_s", where, list, [])
    try:
        windows = normalize_windows((_us(a), _us(b)) for a, b in raw)
    except (TypeError, ValueError) as exc:
        c.add(f"{where}.windows_s", f"bad window list: {exc}")
    policy = c.get(t, "window_policy", where, str, "queue")
    if policy not in ("queue", "drop"):
        c.add(f"{where}.window_policy", f"must be 'queue' or 'drop', got {policy!r}")
    limit = c.get(t, "queue_limit", where, int, 1024)
    if limit < 0:
        c.add(f"{where}.queue_limit", "must be >= 0")
    unknown = set(t) - set(kw) - {"windows_s", "window_policy", "queue_limit"}
    for key in sorted(unknown):
        c.add(f"{where}.{key}", "unknown field")
    return LinkConfig(profile, windows, policy, limit)


def parse_scenario(doc: dict, name: str = "scenario") -> ScenarioConfig:
    c = _Collector()
    cfg = ScenarioConfig(name=c.get(doc, "name", "", str, name), links={})

    seed = c.get(doc, "seed", "", int, 0)
    if not 0 <= seed < 2**64:
        c.add("seed", "must be an unsigned 64-bit integer")
    cfg.seed = seed
    duration = c.get(doc, "duration_s", "", float, None, required=True)
    if duration is not None:
        if duration <= 0:
            c.add("duration_s", "must be positive")
        cfg.duration_us = _us(duration)
    cadence = c.get(doc, "metrics_cadence_s", "", float, 1.0)
    if cadence <= 0:
        c.add("metrics_cadence_s", "must be positive")
    else:
        cfg.cadence_us = _us(cadence)

    links = c.get(doc, "links", "", dict, {})
    for lname, table in links.items():
        if lname not in LINK_NAMES:
            c.add(f"links.{lname}", f"unknown link; expected one of {', '.join(LINK_NAMES)}")
            continue
        if not isinstance(table, dict):
            c.add(f"links.{lname}", "must be a table")
            continue
        lc = _parse_link(c, lname, table)
        if lc is not None:
            cfg.links[lname] = lc
    for lname in ("feeder", "ground"):
        cfg.links.setdefault(lname, LinkConfig(LinkProfile()))

    proc = c.get(doc, "processing", "", dict, {})
    for key, value in proc.items():
        nf = key.removesuffix("_us")
        if nf not in DEFAULT_PROCESSING_US or not key.endswith("_us"):
            c.add(f"processing.{key}", "unknown field")
        elif not isinstance(value, int) or isinstance(value, bool) or value < 0:
            c.add(f"processing.{key}", "must be a nonnegative integer")
        else:
            cfg.processing_us[nf] = value

    core = c.get(doc, "core", "", dict, {})
    cfg.pool = c.get(core, "pool", "core", str, cfg.pool)
    try:
        net = ipaddress.IPv4Network(cfg.pool)
        if net.num_addresses < 4:
            c.add("core.pool", "pool needs at least 4 addresses")
    except ValueError as exc:
        c.add("core.pool", str(exc))
    auth = c.get(core, "auth_timeout_s", "core", float, None)
    if auth is not None:
        cfg.auth_timeout_us = _us(auth)
    ue_to = c.get(core, "ue_timeout_s", "core", float, None)
    if ue_to is not None:
        cfg.ue_timeout_us = _us(ue_to)
    rt = c.get(core, "retransmit_s", "core", float, None)
    if rt is not None:
        if rt <= 0:
            c.add("core.retransmit_s", "must be positive")
        cfg.retransmit_us = _us(rt)
    cfg.max_retries = c.get(core, "max_retries", "core", int, cfg.max_retries)

    dns = []
    raw_dns = c.get(doc, "data_networks", "", list, None)
    if raw_dns is None:
        raw_dns = [{"name": "internet", "target": "ground", "prefixes": ["0.0.0.0/0"]},
                   {"name": "onboard", "target": "onboard", "prefixes": ["10.64.0.0/16"]}]
    seen_prefixes = {}
    for i, t in enumerate(raw_dns):
        where = f"data_networks[{i}]"
        dname = c.get(t, "name", where, str, None, required=True)
        target = c.get(t, "target", where, str, "ground")
        try:
            target = DnTarget(target)
        except ValueError:
            c.add(f"{where}.target", f"must be 'onboard' or 'ground', got {target!r}")
            continue
        prefixes = []
        for p in c.get(t, "prefixes", where, list, []):
            try:
                net = ipaddress.IPv4Network(p)
            except (ValueError, TypeError) as exc:
                c.add(f"{where}.prefixes", str(exc))
                continue
            if net in seen_prefixes:
                c.add(f"{where}.prefixes", f"{net} already claimed by {seen_prefixes[net]}")
                continue
            seen_prefixes[net] = dname
            prefixes.append(net)
        if dname is not None:
            if any(d.name == dname for d in dns):
                c.add(f"{where}.name", f"duplicate data network {dname!r}")
            dns.append(DataNetworkConfig(dname, target, tuple(prefixes)))
    cfg.data_networks = tuple(dns)
    dn_names = {d.name for d in dns}

    gnbs = []
    for i, t in enumerate(c.get(doc, "gnbs", "", list, [{"id": 1}])):
        gid = c.get(t, "id", f"gnbs[{i}]", int, None, required=True)
        if gid is not None:
            if not 0 <= gid < 2**32:
                c.add(f"gnbs[{i}].id", "must fit in 32 bits")
            gnbs.append(gid)
    cfg.gnbs = tuple(gnbs)

    ues = []
    groups: dict[str, list[str]] = {}
    for i, t in enumerate(c.get(doc, "ues", "", list, [])):
        where = f"ues[{i}]"
        supi = c.get(t, "supi", where, str, None, required=True)
        key = c.get(t, "key", where, str, None, required=True)
        gnb = c.get(t, "gnb", where, int, gnbs[0] if gnbs else 1)
        count = c.get(t, "count", where, int, 1)
        group = c.get(t, "group", where, str, None)
        if supi is None or key is None:
            continue
        if not is_valid_supi(supi):
            c.add(f"{where}.supi", f"{supi!r} is not 15 decimal digits")
            continue
        try:
            kbytes = bytes.fromhex(key)
            if not kbytes:
                raise ValueError("empty key")
        except ValueError as exc:
            c.add(f"{where}.key", f"bad hex key: {exc}")
            continue
        if gnb not in gnbs:
            c.add(f"{where}.gnb", f"unknown gNB {gnb}")
        if count < 1 or int(supi) + count > 10**15:
            c.add(f"{where}.count", "out of range")
            continue
        for k in range(count):
            s = f"{int(supi) + k:015d}"
            ues.append(UeConfig(s, kbytes, gnb, group))
            if group:
                groups.setdefault(group, []).append(s)
    if len({u.supi for u in ues}) != len(ues):
        c.add("ues", "duplicate SUPI in roster")
    cfg.ues = tuple(ues)
    roster = {u.supi for u in ues}
    for g in groups:
        if g in roster:
            c.add("ues", f"group name {g!r} collides with a SUPI")

    timeline = []
    for i, t in enumerate(c.get(doc, "timeline", "", list, [])):
        where = f"timeline[{i}]"
        at = c.get(t, "at_s", where, float, None, required=True)
        who = c.get(t, "ue", where, str, None, required=True)
        action = c.get(t, "action", where, str, None, required=True)
        if at is None or who is None or action is None:
            continue
        if action not in ACTIONS:
            c.add(f"{where}.action", f"unknown action {action!r}")
            continue
        members = groups.get(who) or ([who] if who in roster else None)
        if members is None:
            c.add(f"{where}.ue", f"{who!r} is neither a roster SUPI nor a group")
            continue
        stagger = c.get(t, "stagger_us", where, int, 0)
        params = {k: v for k, v in t.items() if k not in ("at_s", "ue", "action", "stagger_us")}
        allowed = {
            "register": set(),
            "deregister": set(),
            "session": {"dn", "qos", "pdu_session_id"},
            "release": {"dn"},
            "traffic": {"dn", "dst", "count", "size", "interval_us"},
            "downlink": {"dn", "count", "size", "interval_us"},
        }[action]
        for key in sorted(set(params) - allowed):
            c.add(f"{where}.{key}", f"not a parameter of {action!r}")
        if "dn" in params and params["dn"] not in dn_names and action != "session":
            c.add(f"{where}.dn", f"unknown data network {params['dn']!r}")
        if action == "traffic":
            if "dst" not in params:
                c.add(f"{where}.dst", "missing")
            else:
                try:
                    ipaddress.IPv4Address(params["dst"])
                except ValueError as exc:
                    c.add(f"{where}.dst", str(exc))
        if action in ("traffic", "downlink"):
            for key, lo in (("count", 1), ("size", 1), ("interval_us", 0)):
                v = params.get(key, lo)
                if not isinstance(v, int) or v < lo:
                    c.add(f"{where}.{key}", f"must be an integer >= {lo}")
        base = _us(at)
        for k, supi in enumerate(members):
            when = base + k * stagger
            if not 0 <= when <= cfg.duration_us:
                c.add(where, f"start {when / 1e6:g}s lies outside [0, duration]")
                break
            timeline.append(Action(when, supi, action, dict(params)))
    cfg.timeline = tuple(timeline)

    unknown = set(doc) - {"name", "seed", "duration_s", "metrics_cadence_s", "links", "processing",
                          "core", "data_networks", "gnbs", "ues", "timeline"}
    for key in sorted(unknown):
        c.add(key, "unknown field")

    if c.problems:
        raise ConfigError(c.problems)
    return cfg


def shipped_scenarios() -> list[str]:
    root = resources.files("orbit5gc") / "scenarios"
    return sorted(p.name.removesuffix(".toml") for p in root.iterdir() if p.name.endswith(".toml"))


def scenario_text(name_or_path: str | os.PathLike) -> tuple[str, str]:
    """Return ``(text, name)`` for a shipped scenario name or a file path."""
    path = Path(name_or_path)
    if path.suffix == ".toml" or path.exists():
        try:
            return path.read_text(encoding="utf-8"), path.stem
        except OSError as exc:
            raise ConfigError([("scenario", f"cannot read {path}: {exc.strerror}")]) from None
    ref = resources.files("orbit5gc") / "scenarios" / f"{name_or_path}.toml"
    if not ref.is_file():
        raise ConfigError([("scenario", f"no file or shipped scenario named {name_or_path!r}")])
    return ref.read_text(encoding="utf-8"), str(name_or_path)


def load_scenario(name_or_path, seed: int | None = None, env=None) -> ScenarioConfig:
    """Load and validate a scenario.

    Seed precedence: explicit ``seed``, then ``ORBIT5GC_SEED`` in ``env``
    (defaults to ``os.environ``), then the file.
    """
    text, name = scenario_text(name_or_path)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("scenario", f"TOML syntax: {exc}")]) from None
    cfg = parse_scenario(doc, name)
    env = os.environ if env is None else env
    if seed is None and env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV], 0)
        except ValueError:
            raise ConfigError([(SEED_ENV, f"not an integer: {env[SEED_ENV]!r}")]) from None
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError([("seed", "must be an unsigned 64-bit integer")])
        cfg.seed = seed
    return cfg
