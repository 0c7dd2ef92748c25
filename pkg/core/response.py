"""Envelope helpers for JSON summaries.

Every JSON file the lab writes uses this structure:
{
    "data": <payload or null>,
    "meta": { run_id, config_hash, version, ... },
    "errors": [] | [ { code, message, details } ]
}
"""
from __future__ import annotations

from typing import Any


def json_success(data: Any = None, *, meta: dict | None = None) -> dict:
    return {
        "data": data,
        "meta": meta or {},
        "errors": [],
    }


def json_error(message: str, *, code: str = "lab_error", details: Any | None = None, meta: dict | None = None) -> dict:
    return {
        "data": None,
        "meta": meta or {},
        "errors": [
            {
                "code": code,
                "message": message,
                "details": details,
            }
        ],
    }


__all__ = ["json_success", "json_error"]
