"""UTC timestamps for run ids and record provenance."""
from __future__ import annotations

from datetime import datetime, timezone
from typing import Optional

__all__ = ["now_utc", "compact_stamp"]


def now_utc() -> datetime:
    return datetime.now(timezone.utc)


def compact_stamp(dt: Optional[datetime] = None) -> str:
    """Second-resolution stamp like 20261018T101500Z. Naive datetimes are taken as UTC."""
    dt = dt or now_utc()
    dt = dt.replace(tzinfo=timezone.utc) if dt.tzinfo is None else dt.astimezone(timezone.utc)
    return dt.strftime("%Y%m%dT%H%M%SZ")
