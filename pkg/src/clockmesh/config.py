"""TOML configuration loading.

Node identifiers in config files are 1-based (as in the reports); the API
is 0-based throughout.  The conversion happens here and nowhere else.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import ProtocolParams, SystemState
from .noise import Jitter, NoiseSpec
from .sim import Event, Scenario
from .topology import TopologySpec


class ConfigError(ValueError):
    """Configuration file could not be parsed or validated."""


@dataclass
class OptimizeOptions:
    rho_star: float = 0.999
    max_iter: int = 100
    free: tuple[str, ...] = ("kappa1", "kappa2", "p")


@dataclass
class Config:
    """Validated contents of one configuration file."""

    topo: TopologySpec
    params: ProtocolParams
    noise: NoiseSpec
    init: SystemState
    steps: int = 1000
    warmup: float = 0.2
    spurious_filter: bool = False
    events: list = field(default_factory=list)
    optimize: OptimizeOptions = field(default_factory=OptimizeOptions)

    def scenario(self) -> Scenario:
        return Scenario(
            topo=self.topo,
            params=self.params,
            noise=self.noise,
            steps=self.steps,
            events=self.events,
            warmup=self.warmup,
            spurious_filter=self.spurious_filter,
            init=self.init,
        )


def _node(value: Any, n: int, where: str) -> int:
    try:
        idx = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: node id must be an integer, got {value!r}")
    if not 1 <= idx <= n:
        raise ConfigError(f"{where}: node id {idx} outside 1..{n}")
    return idx - 1


def _parse_edges(raw: Any, n: int, where: str) -> list[tuple[int, int, float]]:
    if not isinstance(raw, list) or not all(isinstance(e, list) and len(e) == 3 for e in raw):
        raise ConfigError(f"{where}: edges must be a list of [from, to, weight] triples")
    return [
        (_node(e[0], n, where), _node(e[1], n, where), float(e[2]))
        for e in raw
    ]


def _parse_jitter(tbl: dict, where: str) -> Jitter:
    model = tbl.get("model", "none")
    try:
        if model == "none":
            return Jitter.none()
        if model == "uniform-grid":
            return Jitter.uniform_grid(float(tbl["max_value"]), float(tbl.get("grid", 1e-6)))
        if model == "gaussian":
            return Jitter.gaussian(float(tbl["sigma"]))
        if model == "constant":
            return Jitter.constant(float(tbl["wbar"]))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing jitter field {exc}")
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}")
    raise ConfigError(f"{where}: unknown jitter model {model!r}")


def _parse_event(tbl: dict, n: int, where: str) -> Event:
    kind = tbl.get("type")
    step = tbl.get("step")
    if kind is None or step is None:
        raise ConfigError(f"{where}: events need 'step' and 'type'")
    try:
        if kind == "replace-topology":
            edges = _parse_edges(tbl.get("edges", []), n, where)
            gw = tbl.get("gw")
            topo = TopologySpec(n=n, edges=edges, gw=gw)
            return Event(step=int(step), kind=kind, topo=topo)
        if kind in ("disable-node", "enable-node"):
            return Event(step=int(step), kind=kind, node=_node(tbl["node"], n, where))
        if kind == "inject-offset":
            return Event(
                step=int(step), kind=kind,
                node=_node(tbl["node"], n, where), seconds=float(tbl["seconds"]),
            )
        if kind == "inject-bias":
            edge = tbl.get("edge")
            if not isinstance(edge, list) or len(edge) != 2:
                raise ConfigError(f"{where}: inject-bias needs edge = [from, to]")
            return Event(
                step=int(step), kind=kind,
                edge=(_node(edge[0], n, where), _node(edge[1], n, where)),
                seconds=float(tbl["seconds"]),
            )
    except KeyError as exc:
        raise ConfigError(f"{where}: missing event field {exc}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}")
    raise ConfigError(f"{where}: unknown event type {kind!r}")


def load_config(path: str) -> Config:
    """Parse and validate a TOML configuration file.

    Raises:
        ConfigError: on syntax errors (with line/column from the TOML
            parser) or semantic errors (with the offending section/key).
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")

    if "topology" not in raw:
        raise ConfigError("missing [topology] section")
    topo_tbl = raw["topology"]
    try:
        n = int(topo_tbl["nodes"])
    except KeyError:
        raise ConfigError("[topology]: missing 'nodes'")
    edges = _parse_edges(topo_tbl.get("edges", []), n, "[topology]")
    try:
        topo = TopologySpec(
            n=n,
            edges=edges,
            r=topo_tbl.get("skews"),
            gw=topo_tbl.get("gw"),
            gd=topo_tbl.get("gd"),
        )
    except ValueError as exc:
        raise ConfigError(f"[topology]: {exc}")

    if "params" not in raw:
        raise ConfigError("missing [params] section")
    par = raw["params"]
    try:
        params = ProtocolParams(
            kappa1=float(par["kappa1"]),
            kappa2=float(par["kappa2"]),
            p=float(par["p"]),
            tau=float(par["tau"]),
        )
    except KeyError as exc:
        raise ConfigError(f"[params]: missing {exc}")
    except ValueError as exc:
        raise ConfigError(f"[params]: {exc}")

    noise_tbl = raw.get("noise", {})
    jitter = _parse_jitter(noise_tbl.get("jitter", {}), "[noise.jitter]")
    jitter_edges = {}
    for idx, tbl in enumerate(noise_tbl.get("jitter_edges", [])):
        where = f"[[noise.jitter_edges]] #{idx + 1}"
        edge = tbl.get("edge")
        if not isinstance(edge, list) or len(edge) != 2:
            raise ConfigError(f"{where}: needs edge = [from, to]")
        key = (_node(edge[0], n, where), _node(edge[1], n, where))
        jitter_edges[key] = _parse_jitter(tbl, where)
    try:
        noise = NoiseSpec(
            jitter=jitter,
            jitter_edges=jitter_edges,
            wander_sigma=float(noise_tbl.get("wander_sigma", 0.0)),
            seed=int(noise_tbl.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[noise]: {exc}")

    init_tbl = raw.get("initial", {})
    try:
        init = SystemState.initial(
            n, x=init_tbl.get("x"), s=init_tbl.get("s"), y=init_tbl.get("y")
        )
    except ValueError as exc:
        raise ConfigError(f"[initial]: {exc}")

    sc_tbl = raw.get("scenario", {})
    events = [
        _parse_event(tbl, n, f"[[scenario.events]] #{i + 1}")
        for i, tbl in enumerate(sc_tbl.get("events", []))
    ]

    opt_tbl = raw.get("optimize", {})
    optimize = OptimizeOptions(
        rho_star=float(opt_tbl.get("rho_star", 0.999)),
        max_iter=int(opt_tbl.get("max_iter", 100)),
        free=tuple(opt_tbl.get("free", ("kappa1", "kappa2", "p"))),
    )

    try:
        cfg = Config(
            topo=topo,
            params=params,
            noise=noise,
            init=init,
            steps=int(sc_tbl.get("steps", 1000)),
            warmup=float(sc_tbl.get("warmup", 0.2)),
            spurious_filter=bool(sc_tbl.get("spurious_filter", False)),
            events=events,
            optimize=optimize,
        )
        cfg.scenario()  # validates steps / warmup / event ranges
    except ValueError as exc:
        raise ConfigError(f"[scenario]: {exc}")
    return cfg
