"""Default factory tables for registered functions, with an optional on-disk cache.

Tables are deterministic functions of (target, build config), so a cached
table is interchangeable with a freshly built one.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from .factory import EtaSearchConfig, FactoryError, FactoryTable, build_table, check_poly_bound, load_table, save_table
from .registry import get_entry

log = logging.getLogger(__name__)

_MEMO: dict[tuple[str, str], FactoryTable] = {}


def default_cache_dir() -> Path | None:
    """``$KOBDUAL_CACHE`` if set (empty disables caching), else ``~/.cache/kobdual``."""
    env = os.environ.get("KOBDUAL_CACHE")
    if env is not None:
        return Path(env) if env else None
    return Path.home() / ".cache" / "kobdual"


def default_config(name: str, **overrides) -> EtaSearchConfig:
    entry = get_entry(name)
    params = {"levels": entry.levels, "mode": entry.mode}
    params.update({k: v for k, v in overrides.items() if v is not None})
    return EtaSearchConfig(**params)


def table_for(name: str, cfg: EtaSearchConfig | None = None, cache_dir: Path | None | str = "default") -> FactoryTable:
    """Build (or load from cache) the factory table of a registered function."""
    entry = get_entry(name)
    cfg = cfg or default_config(name)
    key = (name, cfg.digest())
    if key in _MEMO:
        return _MEMO[key]
    cache = default_cache_dir() if cache_dir == "default" else (Path(cache_dir) if cache_dir else None)
    path = cache / f"{name}-{cfg.digest()}.kob" if cache else None
    table = None
    if path is not None and path.exists():
        try:
            table = load_table(path, entry.target)
            if table.build_config != cfg:
                table = None
        except (FactoryError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable cached table %s: %s", path, exc)
            table = None
    if table is None:
        table = build_table(entry.target, check_poly_bound(entry.target), cfg)
        if path is not None:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                save_table(table, tmp)
                tmp.replace(path)
            except OSError as exc:
                log.warning("could not cache table at %s: %s", path, exc)
    _MEMO[key] = table
    return table
