"""INI-style experiment configuration.

Example::

    [network]
    phy = ofdm-54
    beacon_interval = 100000
    retry_limit = 0

    [ac.BE]
    stations = 1
    deadline = 900

    [ac.VI]
    stations = 2
    deadline = 300

    [experiment]
    seeds = 1 2 3
    duration = 1e7

    [scenario]
    events =
        1e8 add-station VO
        2e8 remove-station VO

AC sections take ``aifsn`` and ``txop_limit`` from the standard OFDM
parameter set when the AC name is one of BK/BE/VI/VO; other names must give
them explicitly. A ``[phy]`` section overrides individual preset constants.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import presets
from .control import ACTIONS, ScenarioEvent
from .errors import ConfigError
from .model import AcParams, NetworkConfig, PhyParams

COMMANDS = ("model", "optimize", "airtime", "linearize", "design", "simulate", "closedloop", "reproduce")
TARGETS = ("table4", "fig4", "fig7", "qr_tuning")

_NETWORK_KEYS = {"phy": str, "beacon_interval": float, "retry_limit": int}
_AC_KEYS = {"stations": int, "deadline": float, "aifsn": int, "txop_limit": float, "burst_size": int}
_PHY_KEYS = {f.name: float for f in fields(PhyParams)}


@dataclass(frozen=True)
class ExperimentSpec:
    command: str | None = None
    config_path: str | None = None
    out: str | None = None
    seeds: tuple[int, ...] = (1,)
    duration_us: float | None = None
    q1: float = presets.Q1
    q2: float = presets.Q2
    rho: float = presets.RHO
    windows: tuple[float, ...] | None = None
    target: str | None = None
    events: tuple[ScenarioEvent, ...] = ()

    def __post_init__(self):
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.target is not None and self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; expected one of {TARGETS}")
        if self.command == "reproduce" and self.target is None:
            raise ConfigError("reproduce needs a target")
        if self.command in ("simulate", "closedloop") and not self.seeds:
            raise ConfigError(f"{self.command} needs at least one seed")
        if self.duration_us is not None and not self.duration_us > 0:
            raise ConfigError("duration must be > 0")
        if min(self.q1, self.q2, self.rho) <= 0:
            raise ConfigError("q1, q2 and rho must be positive")


_EXPERIMENT_KEYS = {"seeds": "ints", "duration": float, "q1": float, "q2": float, "rho": float, "windows": "floats"}


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return kind(raw)
    except ValueError:
        name = {"ints": "list of integers", "floats": "list of numbers", int: "integer", float: "number", str: "string"}[kind]
        raise ConfigError(f"[{section}] {key}: expected {name}, got {raw!r}") from None


def _check_keys(section: str, keys, allowed) -> None:
    for key in keys:
        if key not in allowed:
            raise ConfigError(f"[{section}] unknown key {key!r}; allowed: {', '.join(sorted(allowed))}")


def _parse_events(raw: str, names: tuple[str, ...]) -> tuple[ScenarioEvent, ...]:
    events = []
    for line in raw.strip().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise ConfigError(f"[scenario] events: expected 'time_us action AC', got {line.strip()!r}")
        t, action, ac_name = parts
        if ac_name not in names:
            raise ConfigError(f"[scenario] events: unknown AC {ac_name!r}")
        if action not in ACTIONS:
            raise ConfigError(f"[scenario] events: unknown action {action!r}; expected one of {ACTIONS}")
        events.append(ScenarioEvent(_convert("scenario", "events", t, float), action, names.index(ac_name)))
    return tuple(events)


def loads(text: str, *, path: str | None = None) -> tuple[NetworkConfig, ExperimentSpec]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None

    for section in cp.sections():
        if section not in ("network", "phy", "experiment", "scenario") and not section.startswith("ac."):
            raise ConfigError(f"unknown section [{section}]")

    net = cp["network"] if cp.has_section("network") else {}
    _check_keys("network", net, _NETWORK_KEYS)
    preset = net.get("phy", "ofdm-54")
    if preset not in presets.PHY_PRESETS:
        raise ConfigError(f"[network] phy: unknown preset {preset!r}; expected one of {sorted(presets.PHY_PRESETS)}")
    phy = presets.PHY_PRESETS[preset]
    if cp.has_section("phy"):
        _check_keys("phy", cp["phy"], _PHY_KEYS)
        phy = replace(phy, **{k: _convert("phy", k, v, float) for k, v in cp["phy"].items()})

    acs = []
    for section in cp.sections():
        if not section.startswith("ac."):
            continue
        name = section[3:]
        sec = cp[section]
        _check_keys(section, sec, _AC_KEYS)
        vals = {k: _convert(section, k, v, _AC_KEYS[k]) for k, v in sec.items()}
        for key in ("stations", "deadline"):
            if key not in vals:
                raise ConfigError(f"[{section}] missing required key {key!r}")
        default = presets.EDCA_OFDM.get(name)
        if default is None and not {"aifsn", "txop_limit"} <= vals.keys():
            raise ConfigError(f"[{section}] non-standard AC needs aifsn and txop_limit")
        aifsn, txop = default if default is not None else (None, None)
        acs.append(AcParams(
            name=name,
            aifsn=vals.get("aifsn", aifsn),
            txop_limit=vals.get("txop_limit", txop),
            delay_deadline=vals["deadline"],
            n_stations=vals["stations"],
            burst_size=vals.get("burst_size"),
        ))
    if not acs:
        raise ConfigError("configuration defines no [ac.<name>] section")
    kw = {}
    if "beacon_interval" in net:
        kw["beacon_interval"] = _convert("network", "beacon_interval", net["beacon_interval"], float)
    if "retry_limit" in net:
        kw["retry_limit"] = _convert("network", "retry_limit", net["retry_limit"], int)
    config = NetworkConfig(phy=phy, acs=tuple(acs), **kw)

    ex = cp["experiment"] if cp.has_section("experiment") else {}
    _check_keys("experiment", ex, _EXPERIMENT_KEYS)
    spec_kw = {("duration_us" if k == "duration" else k): _convert("experiment", k, v, _EXPERIMENT_KEYS[k]) for k, v in ex.items()}
    if cp.has_section("scenario"):
        _check_keys("scenario", cp["scenario"], {"events"})
        spec_kw["events"] = _parse_events(cp["scenario"].get("events", ""), config.names)
    if "windows" in spec_kw and len(spec_kw["windows"]) != config.N:
        raise ConfigError(f"[experiment] windows: expected {config.N} values, got {len(spec_kw['windows'])}")
    return config, ExperimentSpec(config_path=path, **spec_kw)


def parse_config(path) -> tuple[NetworkConfig, ExperimentSpec]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file {str(p)!r} not found")
    return loads(p.read_text(), path=str(p))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def dumps(config: NetworkConfig, spec: ExperimentSpec | None = None) -> str:
    """Canonical text form; :func:`loads` inverts it exactly."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    preset = next((k for k, v in presets.PHY_PRESETS.items() if v == config.phy), None)
    cp["network"] = {
        "phy": preset or "ofdm-54",
        "beacon_interval": _fmt(float(config.beacon_interval)),
        "retry_limit": str(config.retry_limit),
    }
    if preset is None:
        cp["phy"] = {f.name: _fmt(float(getattr(config.phy, f.name))) for f in fields(PhyParams)}
    for ac in config.acs:
        sec = {
            "stations": str(ac.n_stations),
            "deadline": _fmt(float(ac.delay_deadline)),
            "aifsn": str(ac.aifsn),
            "txop_limit": _fmt(float(ac.txop_limit)),
        }
        if ac.burst_size is not None:
            sec["burst_size"] = str(ac.burst_size)
        cp[f"ac.{ac.name}"] = sec
    if spec is not None:
        ex = {"seeds": " ".join(str(s) for s in spec.seeds), "q1": _fmt(float(spec.q1)), "q2": _fmt(float(spec.q2)), "rho": _fmt(float(spec.rho))}
        if spec.duration_us is not None:
            ex["duration"] = _fmt(float(spec.duration_us))
        if spec.windows is not None:
            ex["windows"] = " ".join(_fmt(float(w)) for w in spec.windows)
        cp["experiment"] = ex
        if spec.events:
            lines = [f"{_fmt(float(e.time_us))} {e.action} {config.names[e.ac_index]}" for e in spec.events]
            cp["scenario"] = {"events": "\n" + "\n".join(lines)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(config: NetworkConfig) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()[:16]
