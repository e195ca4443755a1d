"""JSON run configuration with strict key checking."""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .channel_models import ChannelSet, LinkSpecs, SatChannelSpec, TerrestrialChannelSpec
from .experiments import SearchSettings, SweepSpec, default_links
from .rate_metrics import ScenarioConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


TOP_KEYS = {"seed", "scenario", "links", "robust", "search", "sweep", "channels", "output"}
SAT_LINKS = ("sat_p", "sat_s", "sat_e")
TER_LINKS = ("ter_p", "ter_s", "ter_e")
CHANNEL_KEYS = ("h_p", "h_s", "H_e", "g_p", "g_s", "G_e")


@dataclass(frozen=True)
class RobustSettings:
    eps_p: float
    eps_e: float


@dataclass(frozen=True)
class RunConfig:
    """Everything a ``solve`` or ``sweep`` run needs."""

    scenario: ScenarioConfig
    links: LinkSpecs
    search: SearchSettings
    seed: int = 0
    robust: RobustSettings | None = None
    sweep: SweepSpec | None = None
    channels: ChannelSet | None = None
    output: str | None = None
    source: str = "<dict>"

    @property
    def command(self) -> str:
        return "sweep" if self.sweep is not None else "solve"

    def with_seed(self, seed: int) -> RunConfig:
        sweep = replace(self.sweep, seed=seed) if self.sweep is not None else None
        return replace(self, seed=seed, sweep=sweep)


def _check_keys(obj: Any, allowed, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}; allowed: {sorted(allowed)}")
    return obj


def _build(cls, obj: dict, where: str, skip=()):
    names = [f.name for f in fields(cls) if f.init and f.name not in skip]
    _check_keys(obj, names, where)
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _complex_array(obj: Any, where: str) -> np.ndarray:
    if isinstance(obj, dict):
        _check_keys(obj, {"re", "im"}, where)
        re = np.asarray(obj.get("re", 0.0), dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise ConfigError(f"{where}: 're' and 'im' shapes differ ({re.shape} vs {im.shape})")
        return re + 1j * im
    try:
        return np.asarray(obj, dtype=float).astype(complex)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected numbers or {{'re': ..., 'im': ...}}") from exc


def parse_config(data: dict, source: str = "<dict>") -> RunConfig:
    """Validate a decoded JSON document; raises :class:`ConfigError`."""
    _check_keys(data, TOP_KEYS, source)
    scenario = _build(ScenarioConfig, data.get("scenario", {}), f"{source}: scenario")

    links = default_links(scenario.n_t, scenario.n_s)
    link_obj = _check_keys(data.get("links", {}), SAT_LINKS + TER_LINKS, f"{source}: links")
    updates = {}
    for name, spec in link_obj.items():
        where = f"{source}: links.{name}"
        base = getattr(links, name)
        if name in SAT_LINKS:
            allowed = [f.name for f in fields(SatChannelSpec)]
        else:
            allowed = [f.name for f in fields(TerrestrialChannelSpec) if f.name != "n_antennas"]
        _check_keys(spec, allowed, where)
        try:
            updates[name] = replace(base, **spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if updates:
        links = LinkSpecs(**{n: updates.get(n, getattr(links, n)) for n in SAT_LINKS + TER_LINKS})

    search = _build(SearchSettings, data.get("search", {}), f"{source}: search")

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"{source}: seed must be a non-negative integer, got {seed!r}")

    robust = None
    if "robust" in data:
        obj = _check_keys(data["robust"], {"eps_p", "eps_e"}, f"{source}: robust")
        if "eps_p" not in obj:
            raise ConfigError(f"{source}: robust.eps_p is required")
        eps_p = obj["eps_p"]
        eps_e = obj.get("eps_e", eps_p)
        for k, v in (("eps_p", eps_p), ("eps_e", eps_e)):
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{source}: robust.{k} must be a number >= 0, got {v!r}")
        robust = RobustSettings(float(eps_p), float(eps_e))

    channels = None
    if "channels" in data:
        obj = _check_keys(data["channels"], CHANNEL_KEYS, f"{source}: channels")
        missing = [k for k in CHANNEL_KEYS if k not in obj]
        if missing:
            raise ConfigError(f"{source}: channels missing {missing}")
        arrays = {k: _complex_array(obj[k], f"{source}: channels.{k}") for k in CHANNEL_KEYS}
        try:
            channels = ChannelSet(**arrays)
        except ValueError as exc:
            raise ConfigError(f"{source}: channels: {exc}") from exc
        dims = (channels.n_t, channels.n_s, channels.n_r)
        if dims != (scenario.n_t, scenario.n_s, scenario.n_r):
            raise ConfigError(f"{source}: channels have (n_t, n_s, n_r) = {dims}, scenario says "
                              f"{(scenario.n_t, scenario.n_s, scenario.n_r)}")

    sweep = None
    if "sweep" in data:
        obj = _check_keys(data["sweep"], {"axis", "grid", "n_trials", "schemes"}, f"{source}: sweep")
        for req in ("axis", "grid", "n_trials"):
            if req not in obj:
                raise ConfigError(f"{source}: sweep.{req} is required")
        if robust is not None or channels is not None:
            raise ConfigError(f"{source}: 'robust' and 'channels' apply to solve runs only; "
                              "sweeps set eps through their schemes")
        try:
            sweep = SweepSpec(
                axis=obj["axis"], grid=tuple(obj["grid"]), n_trials=obj["n_trials"], seed=seed,
                schemes=tuple(obj.get("schemes", ("perfect",))), scenario=scenario, links=links,
                search=search,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: sweep: {exc}") from exc

    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError(f"{source}: output must be a path string")
    return RunConfig(scenario=scenario, links=links, search=search, seed=seed, robust=robust,
                     sweep=sweep, channels=channels, output=output, source=source)


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON config file.

    Raises:
        ConfigError: unreadable file, invalid JSON (with line and column) or
            schema violations.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    return parse_config(data, source=str(path))


def preset_path(name: str) -> Path:
    """Path of a bundled preset (``scenario``, ``fig2_tau_p`` or ``fig3_tau_s``)."""
    p = Path(__file__).parent / "presets" / f"{name}.json"
    if not p.exists():
        available = sorted(q.stem for q in p.parent.glob("*.json"))
        raise ConfigError(f"unknown preset {name!r}; available: {available}")
    return p
