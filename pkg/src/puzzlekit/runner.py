"""
Async runner for independent analysis jobs.
Jobs run in a worker pool bounded by a semaphore; results are batched and
written by a single writer task in submission order.
"""

import asyncio
import functools
import json
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import structlog
from pydantic import BaseModel

from .errors import PuzzlekitError
from .precision import Precision, resolve_precision
from .schemas import JobResult, create_error_data

logger = structlog.get_logger(__name__)

Job = Tuple[str, Callable[..., Any], Sequence[Any], Dict[str, Any]]


def _invoke(fn: Callable[..., Any], args: Sequence[Any], kwargs: Dict[str, Any], bits: int) -> Any:
    """Run fn under the runner precision; mpmath precision is process global"""
    with Precision(bits=bits).activate():
        return fn(*args, **kwargs)


def to_jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


def _line(result: JobResult) -> str:
    # timings and error timestamps are left out so reruns write identical bytes
    data = result.model_dump(mode="json", exclude={"elapsed_ms": True, "error": {"timestamp"}})
    return json.dumps(data, sort_keys=True)


class AnalysisRunner:
    """Worker pool with bounded concurrency and one writer per output file"""

    def __init__(
        self,
        workers: int = 1,
        precision: Optional[Precision] = None,
        output: Optional[Union[str, Path]] = None,
        batch_size: int = 10,
        use_processes: Optional[bool] = None,
    ):
        """
        Initialize the runner

        Args:
            workers: Maximum number of jobs running at once
            precision: Precision activated around every job
            output: JSON-lines file receiving each result, in submission order
            batch_size: Results buffered before the writer flushes
            use_processes: Force a process (True) or thread (False) pool; by
                default extended precision uses processes
        """
        self.workers = max(int(workers), 1)
        self.precision = resolve_precision(precision)
        self.output = Path(output) if output else None
        self.batch_size = batch_size
        processes = self.precision.extended if use_processes is None else use_processes
        self._executor: Executor = (
            ProcessPoolExecutor(max_workers=self.workers)
            if processes
            else ThreadPoolExecutor(max_workers=self.workers)
        )
        self._semaphore = asyncio.Semaphore(self.workers)
        self._queue: "asyncio.Queue[Optional[JobResult]]" = asyncio.Queue()
        self._writer_task: Optional[asyncio.Task] = None
        self._next_index = 0
        self._closed = False

    async def _run_job(self, index: int, name: str, fn: Callable[..., Any], args: Sequence[Any], kwargs: Dict[str, Any]) -> JobResult:
        loop = asyncio.get_running_loop()
        async with self._semaphore:
            started = time.perf_counter()
            call = functools.partial(_invoke, fn, tuple(args), dict(kwargs), self.precision.bits)
            try:
                value = await loop.run_in_executor(self._executor, call)
                outcome = JobResult(index=index, name=name, ok=True, result=to_jsonable(value))
            except PuzzlekitError as e:
                outcome = JobResult(index=index, name=name, ok=False, error=e.to_error_data())
            except Exception as e:
                logger.error("job_crashed", job=name, error=str(e))
                outcome = JobResult(
                    index=index,
                    name=name,
                    ok=False,
                    error=create_error_data(type(e).__name__, str(e)),
                )
            outcome.elapsed_ms = int((time.perf_counter() - started) * 1000)
        logger.debug("job_finished", job=name, index=index, ok=outcome.ok, elapsed_ms=outcome.elapsed_ms)
        if self.output is not None:
            await self._queue.put(outcome)
        return outcome

    async def _writer(self) -> None:
        """Single writer: holds results until their predecessors are written"""
        assert self.output is not None
        pending: Dict[int, JobResult] = {}
        buffer: List[str] = []
        expected = 0
        while True:
            item = await self._queue.get()
            if item is None:
                break
            pending[item.index] = item
            while expected in pending:
                buffer.append(_line(pending.pop(expected)))
                expected += 1
            if len(buffer) >= self.batch_size:
                self._flush(buffer)
                buffer = []
        for index in sorted(pending):
            buffer.append(_line(pending[index]))
        self._flush(buffer)

    def _flush(self, lines: List[str]) -> None:
        if not lines or self.output is None:
            return
        with self.output.open("a", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")

    async def run(self, jobs: Iterable[Job]) -> List[JobResult]:
        """Run jobs concurrently; results come back in submission order"""
        if self._closed:
            raise RuntimeError("runner is closed")
        if self.output is not None and self._writer_task is None:
            self.output.parent.mkdir(parents=True, exist_ok=True)
            self.output.write_text("", encoding="utf-8")
            self._writer_task = asyncio.create_task(self._writer())
        tasks = []
        for name, fn, args, kwargs in jobs:
            tasks.append(self._run_job(self._next_index, name, fn, args, kwargs))
            self._next_index += 1
        results = await asyncio.gather(*tasks)
        logger.info("jobs_completed", jobs=len(results), failed=sum(not r.ok for r in results))
        return list(results)

    async def map(self, name: str, fn: Callable[..., Any], items: Iterable[Any], **kwargs: Any) -> List[JobResult]:
        """fn(item, **kwargs) for every item"""
        return await self.run((f"{name}[{i}]", fn, (item,), kwargs) for i, item in enumerate(items))

    async def close(self) -> None:
        """Drain the writer and shut the pool down"""
        if self._closed:
            return
        self._closed = True
        if self._writer_task is not None:
            await self._queue.put(None)
            await self._writer_task
        self._executor.shutdown(wait=True)

    async def __aenter__(self) -> "AnalysisRunner":
        return self

    async def __aexit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        await self.close()

