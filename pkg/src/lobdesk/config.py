"""Flat key=value configuration shared by every CLI subcommand.

The format is deliberately plain text, one `key = value` per line, with
`#` comments and blank lines ignored.  Flat keys with section prefixes
(``prior.``, ``mm.``, ``hft.``, ``volume.``, ``vwap.``, ``sim.``,
``report.``) keep files diff-friendly, trivially greppable, and readable
by any language without a parser dependency, and the canonical rendering
below gives a stable hash that output files can embed for provenance.

Every key is registered with a type and either a default or a REQUIRED
marker.  Unknown keys and malformed values are errors that name the key,
so a typo cannot silently fall back to a default.  Command-line overrides
(``--override key=value``) pass through the same registry.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

from .book import BookState
from .broker import VolumeParams, VWAPModel
from .hft import HFTParams, OUParams, centered_grid
from .mm import MMParams
from .prior import PriorConfig

__all__ = [
    "ConfigError", "REQUIRED", "REGISTRY", "default_config", "parse_value",
    "load_config", "apply_overrides", "require", "canonical_text",
    "config_hash", "build_prior", "build_mm_params", "build_hft_params",
    "build_ou_params", "build_volume_params", "build_vwap_model",
    "build_vwap_tracker_params", "build_book0",
]


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or missing required keys."""


REQUIRED = object()


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_opt_int(raw: str):
    return None if raw.lower() in ("none", "") else int(raw)


def _parse_curve(raw: str) -> tuple[tuple[float, float], ...]:
    """``start:rate,start:rate,...`` with start times increasing from 0."""
    segs = []
    for part in raw.split(","):
        start, _, rate = part.partition(":")
        if not _:
            raise ValueError(f"curve segment {part!r} is not 'start:rate'")
        segs.append((float(start), float(rate)))
    return tuple(segs)


def _parse_choice(*allowed: str):
    def parse(raw: str) -> str:
        if raw not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}; got {raw!r}")
        return raw
    return parse


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(f"{s:g}:{r:g}" for s, r in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


# key -> (parser, default-or-REQUIRED)
REGISTRY: dict[str, tuple] = {
    # order-flow prior (event size laws keep their built-in defaults)
    "prior.limit_rate": (float, 0.6),
    "prior.market_rate": (float, 0.6),
    "prior.cancel_rate": (float, 0.0),
    "prior.imb_slope": (float, 0.35),
    "prior.size_center": (float, 0.7),
    "prior.size_slope": (float, 0.3),
    "prior.center_prob": (float, 0.6),
    "prior.move_prob": (float, 0.75),
    "prior.inspread_prob": (float, 0.9),
    # market maker
    "mm.eta": (float, 1.0),
    "mm.kappa": (float, 0.02),
    "mm.rho": (float, 1e-20),
    "mm.tick": (float, 0.01),
    "mm.horizon": (float, REQUIRED),
    "mm.dt": (float, 0.5),
    "mm.q_max": (int, 12),
    "mm.i_star": (int, 7),
    "mm.max_order": (int, 3),
    "mm.j_max": (_parse_opt_int, None),
    "mm.mirror": (_parse_bool, True),
    # hedged trader
    "hft.eta": (float, 1.0),
    "hft.kappa_fut": (float, 0.02),
    "hft.rho": (float, 1e-20),
    "hft.tick": (float, 0.01),
    "hft.horizon": (float, REQUIRED),
    "hft.dt": (float, 0.5),
    "hft.q_max": (int, 6),
    "hft.i_star": (int, 3),
    "hft.max_order": (int, 3),
    "hft.j_max": (_parse_opt_int, None),
    "hft.s_bar": (float, 0.0),
    "hft.rho_rev": (float, 50.0),
    "hft.sigma": (float, 0.2),
    "hft.s_nodes": (int, 6),
    "hft.s_mesh": (float, 0.005),
    "hft.drift": (_parse_choice("euler", "exact"), "euler"),
    "hft.s_mode": (_parse_choice("tree", "exact"), "tree"),
    # volume tracker
    "volume.rate": (float, 0.2),
    "volume.band": (float, 4.0),
    "volume.target": (int, REQUIRED),
    "volume.interval": (float, 60.0),
    "volume.fill_prob": (float, 0.5),
    "volume.horizon": (float, 3600.0),
    "volume.dt": (float, 0.5),
    "volume.side": (_parse_choice("buy", "sell"), "buy"),
    # vwap tracker
    "vwap.eta": (float, 1.0),
    "vwap.sigma": (float, 0.2),
    "vwap.beta_perm": (float, 4e-4),
    "vwap.kappa_temp": (float, 3e-3),
    "vwap.kappa_end": (float, 0.18),
    "vwap.horizon": (float, REQUIRED),
    "vwap.block": (int, REQUIRED),
    "vwap.curve": (_parse_curve, ((0.0, 1.2),)),
    "vwap.step": (float, 0.01),
    "vwap.root": (_parse_choice("small", "large"), "small"),
    "vwap.band": (float, 4.0),
    "vwap.interval": (float, 60.0),
    "vwap.fill_prob": (float, 0.5),
    "vwap.dt": (float, 0.5),
    "vwap.side": (_parse_choice("buy", "sell"), "buy"),
    # multi-agent market
    "sim.horizon": (float, REQUIRED),
    "sim.dt": (float, 1.0),
    "sim.bid": (int, 1000),
    "sim.ask": (int, 1001),
    "sim.qb": (int, 6),
    "sim.qa": (int, 6),
    "sim.q_cap": (int, 12),
    "sim.roster": (str, "mm,hft,volume_buy,volume_sell,vwap_buy,vwap_sell"),
    # report shaping
    "report.bins": (int, 30),
}


def default_config() -> dict:
    return {k: d for k, (_, d) in REGISTRY.items()}


def parse_value(key: str, raw: str):
    try:
        parser, _ = REGISTRY[key]
    except KeyError:
        raise ConfigError(f"unknown config key: {key}") from None
    try:
        return parser(raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def load_config(path: str | Path | None) -> dict:
    """Defaults overlaid with the file's keys.  No file keeps pure defaults."""
    cfg = default_config()
    if path is None:
        return cfg
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                              f"got {body!r}")
        cfg[key.strip()] = parse_value(key.strip(), raw)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        cfg[key.strip()] = parse_value(key.strip(), raw)
    return cfg


def require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is REQUIRED:
            raise ConfigError(f"missing config key: {key}")


def canonical_text(cfg: dict) -> str:
    lines = [f"{k} = {'<required>' if cfg[k] is REQUIRED else _fmt(cfg[k])}"
             for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# parameter builders
# ---------------------------------------------------------------------------


def build_prior(cfg: dict, q_cap: int) -> PriorConfig:
    return PriorConfig(
        limit_rate=cfg["prior.limit_rate"],
        market_rate=cfg["prior.market_rate"],
        cancel_rate=cfg["prior.cancel_rate"],
        imb_slope=cfg["prior.imb_slope"],
        size_center=cfg["prior.size_center"],
        size_slope=cfg["prior.size_slope"],
        center_prob=cfg["prior.center_prob"],
        move_prob=cfg["prior.move_prob"],
        inspread_prob=cfg["prior.inspread_prob"],
        q_cap=q_cap,
    )


def build_mm_params(cfg: dict) -> MMParams:
    require(cfg, "mm.horizon")
    return MMParams(
        eta=cfg["mm.eta"], kappa=cfg["mm.kappa"], rho=cfg["mm.rho"],
        tick=cfg["mm.tick"], horizon=cfg["mm.horizon"], dt=cfg["mm.dt"],
        q_max=cfg["mm.q_max"], i_star=cfg["mm.i_star"],
        max_order=cfg["mm.max_order"], j_max=cfg["mm.j_max"],
        use_mirror=cfg["mm.mirror"],
    )


def build_hft_params(cfg: dict) -> HFTParams:
    require(cfg, "hft.horizon")
    return HFTParams(
        eta=cfg["hft.eta"], kappa_fut=cfg["hft.kappa_fut"],
        rho=cfg["hft.rho"], tick=cfg["hft.tick"],
        horizon=cfg["hft.horizon"], dt=cfg["hft.dt"],
        q_max=cfg["hft.q_max"], i_star=cfg["hft.i_star"],
        max_order=cfg["hft.max_order"], j_max=cfg["hft.j_max"],
    )


def build_ou_params(cfg: dict, dt: float | None = None) -> OUParams:
    return OUParams(
        s_bar=cfg["hft.s_bar"], rho_rev=cfg["hft.rho_rev"],
        sigma=cfg["hft.sigma"],
        s_grid=centered_grid(n=cfg["hft.s_nodes"], mesh=cfg["hft.s_mesh"],
                             center=cfg["hft.s_bar"]),
        dt=cfg["hft.dt"] if dt is None else dt,
    )


def build_volume_params(cfg: dict, q_cap: int = 12) -> VolumeParams:
    require(cfg, "volume.target")
    return VolumeParams(
        rate=cfg["volume.rate"], band=cfg["volume.band"],
        target=cfg["volume.target"], interval=cfg["volume.interval"],
        fill_prob=cfg["volume.fill_prob"], q_cap=q_cap,
    )


def build_vwap_model(cfg: dict) -> VWAPModel:
    require(cfg, "vwap.horizon", "vwap.block")
    return VWAPModel(
        eta=cfg["vwap.eta"], sigma=cfg["vwap.sigma"],
        beta_perm=cfg["vwap.beta_perm"], kappa_temp=cfg["vwap.kappa_temp"],
        kappa_end=cfg["vwap.kappa_end"], horizon=cfg["vwap.horizon"],
        block=cfg["vwap.block"], curve=cfg["vwap.curve"],
        root=cfg["vwap.root"], step=cfg["vwap.step"],
    )


def build_vwap_tracker_params(cfg: dict, q_cap: int = 12) -> VolumeParams:
    """Tracker mechanics for the VWAP controller (band, refresh, cap)."""
    require(cfg, "vwap.block")
    return VolumeParams(
        rate=0.0, band=cfg["vwap.band"], target=cfg["vwap.block"],
        interval=cfg["vwap.interval"], fill_prob=cfg["vwap.fill_prob"],
        q_cap=q_cap,
    )


def build_book0(cfg: dict) -> BookState:
    return BookState(cfg["sim.bid"], cfg["sim.ask"], cfg["sim.qb"],
                     cfg["sim.qa"])
