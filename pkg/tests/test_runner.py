"""
Tests for the async analysis runner.
"""

import json
import time

import mpmath
import numpy as np
import pytest

from puzzlekit.errors import DomainError
from puzzlekit.precision import Precision
from puzzlekit.runner import AnalysisRunner, to_jsonable
from puzzlekit.schemas import create_interval


def square(x):
    return x * x


def slow_square(x):
    time.sleep(0.05 if x == 0 else 0.0)
    return x * x


def outside(x):
    raise DomainError("point outside the domain", x=x)


def crash(x):
    return 1 / 0


def working_bits():
    return mpmath.mp.prec


class TestAnalysisRunner:
    """Test job execution, error conversion and ordered output"""

    @pytest.mark.asyncio
    async def test_results_in_submission_order(self):
        """Test that results come back in the order jobs were submitted"""
        async with AnalysisRunner(workers=3) as runner:
            results = await runner.map("square", slow_square, range(5))

        assert [r.index for r in results] == [0, 1, 2, 3, 4]
        assert [r.result for r in results] == [0, 1, 4, 9, 16]
        assert [r.name for r in results] == [f"square[{i}]" for i in range(5)]
        assert all(r.ok for r in results)

    @pytest.mark.asyncio
    async def test_analysis_errors_become_error_data(self):
        """Test that puzzlekit errors are recorded with their context"""
        async with AnalysisRunner() as runner:
            (result,) = await runner.run([("outside", outside, (3.0,), {})])

        assert not result.ok
        assert result.error.error_type == "DomainError"
        assert result.error.context == {"x": 3.0}

    @pytest.mark.asyncio
    async def test_unexpected_errors_are_caught(self):
        """Test that a crashing job does not take the batch down"""
        async with AnalysisRunner(workers=2) as runner:
            results = await runner.run([("crash", crash, (0,), {}), ("square", square, (3,), {})])

        assert results[0].error.error_type == "ZeroDivisionError"
        assert results[1].result == 9

    @pytest.mark.asyncio
    async def test_output_lines_ordered(self, tmp_path):
        """Test that the writer emits one JSON line per job in submission order"""
        output = tmp_path / "jobs" / "results.jsonl"
        async with AnalysisRunner(workers=4, output=output, batch_size=2) as runner:
            await runner.map("square", slow_square, range(6))

        lines = [json.loads(line) for line in output.read_text().splitlines()]
        assert [line["index"] for line in lines] == list(range(6))
        assert [line["result"] for line in lines] == [0, 1, 4, 9, 16, 25]
        assert all("elapsed_ms" not in line for line in lines)

    @pytest.mark.asyncio
    async def test_error_lines_have_no_timestamp(self, tmp_path):
        """Test that reruns of failing jobs write identical lines"""
        output = tmp_path / "errors.jsonl"
        async with AnalysisRunner(output=output) as runner:
            await runner.run([("outside", outside, (1.0,), {})])

        (line,) = [json.loads(line) for line in output.read_text().splitlines()]
        assert line["error"]["error_type"] == "DomainError"
        assert "timestamp" not in line["error"]

    @pytest.mark.asyncio
    async def test_precision_activated_per_job(self):
        """Test that jobs run under the runner precision"""
        async with AnalysisRunner(precision=Precision(bits=128), use_processes=False) as runner:
            (result,) = await runner.run([("bits", working_bits, (), {})])

        assert result.result == 128

    @pytest.mark.asyncio
    async def test_closed_runner(self):
        """Test that a closed runner refuses new work"""
        runner = AnalysisRunner()
        await runner.close()
        with pytest.raises(RuntimeError):
            await runner.run([("square", square, (2,), {})])


class TestJsonable:
    """Test conversion of job values"""

    def test_models_and_numbers(self):
        """Test models, tuples and numpy scalars"""
        value = {"piece": create_interval(0.0, 1.0), "pair": (np.float64(0.5), 2), 3: None}
        converted = to_jsonable(value)
        assert converted["piece"] == {"a": 0.0, "b": 1.0}
        assert converted["pair"] == [0.5, 2]
        assert converted["3"] is None
