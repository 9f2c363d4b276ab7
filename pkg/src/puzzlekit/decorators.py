"""
Decorators for structured tracking of analysis entry points.
"""

import asyncio
import functools
import time
from typing import Any, Callable, Dict, Optional

import structlog
from pydantic import BaseModel

from .errors import PuzzlekitError

ContextExtractor = Callable[[tuple, dict, Any], Dict[str, Any]]


def track_analysis(
    name: Optional[str] = None,
    track_errors: bool = True,
    extract_context: Optional[ContextExtractor] = None,
    stamp: Optional[Callable[[tuple, dict], Dict[str, Any]]] = None,
) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """
    Log start, finish, elapsed milliseconds and failures of an analysis call.

    Args:
        name: Event name; the function name when omitted
        track_errors: Log failures with their error type and context
        extract_context: (args, kwargs, result) -> extra fields for the finish event
        stamp: (args, kwargs) -> thresholds written into the result's ``hypotheses``
            or ``thresholds`` mapping when the result model has one
    """

    def decorator(func: Callable[..., Any]) -> Callable[..., Any]:
        event = name or func.__name__
        logger = structlog.get_logger(func.__module__)

        def finish(args: tuple, kwargs: dict, result: Any, started: float) -> Any:
            elapsed_ms = int((time.perf_counter() - started) * 1000)
            fields: Dict[str, Any] = {}
            if extract_context:
                try:
                    fields = extract_context(args, kwargs, result)
                except Exception:
                    fields = {}
            if stamp is not None:
                result = _stamp(result, stamp(args, kwargs))
            logger.info("analysis_finished", analysis=event, elapsed_ms=elapsed_ms, **fields)
            return result

        def failed(exc: Exception, started: float) -> None:
            if not track_errors:
                return
            elapsed_ms = int((time.perf_counter() - started) * 1000)
            context = exc.context if isinstance(exc, PuzzlekitError) else {}
            logger.warning(
                "analysis_failed",
                analysis=event,
                elapsed_ms=elapsed_ms,
                error_type=type(exc).__name__,
                error_message=str(exc),
                **{f"ctx_{k}": v for k, v in context.items()},
            )

        @functools.wraps(func)
        async def async_wrapper(*args: Any, **kwargs: Any) -> Any:
            started = time.perf_counter()
            logger.debug("analysis_started", analysis=event)
            try:
                result = await func(*args, **kwargs)
            except Exception as e:
                failed(e, started)
                raise
            return finish(args, kwargs, result, started)

        @functools.wraps(func)
        def sync_wrapper(*args: Any, **kwargs: Any) -> Any:
            started = time.perf_counter()
            logger.debug("analysis_started", analysis=event)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                failed(e, started)
                raise
            return finish(args, kwargs, result, started)

        if asyncio.iscoroutinefunction(func):
            return async_wrapper
        return sync_wrapper

    return decorator


def _stamp(result: Any, values: Dict[str, Any]) -> Any:
    if not isinstance(result, BaseModel):
        return result
    for field in ("hypotheses", "thresholds"):
        if field in type(result).model_fields:
            merged = dict(getattr(result, field) or {})
            merged.update({k: str(v) for k, v in values.items()})
            return result.model_copy(update={field: merged})
    return result


# Helper extractors


def count_items(args: tuple, kwargs: dict, result: Any) -> Dict[str, Any]:
    """Length of a list result, or of its first list-valued field"""
    if isinstance(result, list):
        return {"items": len(result)}
    if isinstance(result, BaseModel):
        for value in result.__dict__.values():
            if isinstance(value, list):
                return {"items": len(value)}
    return {}


def keyword_thresholds(*keys: str) -> Callable[[tuple, dict], Dict[str, Any]]:
    """Stamp the named keyword arguments that were passed explicitly"""

    def extract(args: tuple, kwargs: dict) -> Dict[str, Any]:
        return {k: kwargs[k] for k in keys if k in kwargs}

    return extract
