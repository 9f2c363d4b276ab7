"""
Tests for analysis tracking decorators.
"""

import asyncio

import pytest
from structlog.testing import capture_logs

from puzzlekit.decorators import count_items, keyword_thresholds, track_analysis
from puzzlekit.errors import NoReturn
from puzzlekit.schemas import LengthSumReport


def _events(logs, name):
    return [entry for entry in logs if entry["event"] == name]


class TestTrackAnalysis:
    """Test track_analysis on sync and async functions"""

    def test_sync_success(self):
        """Test that a finished call logs its name, timing and extracted context"""

        @track_analysis(extract_context=count_items)
        def find_points(n):
            return list(range(n))

        with capture_logs() as logs:
            result = find_points(3)

        assert result == [0, 1, 2]
        (finished,) = _events(logs, "analysis_finished")
        assert finished["analysis"] == "find_points"
        assert finished["items"] == 3
        assert finished["elapsed_ms"] >= 0
        assert _events(logs, "analysis_started")

    @pytest.mark.asyncio
    async def test_async_success(self):
        """Test that coroutines are wrapped as coroutines"""

        @track_analysis(name="scan")
        async def scan():
            await asyncio.sleep(0.01)
            return "done"

        with capture_logs() as logs:
            result = await scan()

        assert result == "done"
        (finished,) = _events(logs, "analysis_finished")
        assert finished["analysis"] == "scan"

    def test_failure_logs_error_context(self):
        """Test that failures are logged with the error context and re-raised"""

        @track_analysis()
        def nest():
            raise NoReturn("critical orbit does not return", level=4, horizon=100)

        with capture_logs() as logs:
            with pytest.raises(NoReturn):
                nest()

        (failed,) = _events(logs, "analysis_failed")
        assert failed["error_type"] == "NoReturn"
        assert failed["error_message"] == "critical orbit does not return"
        assert failed["ctx_level"] == 4
        assert not _events(logs, "analysis_finished")

    @pytest.mark.asyncio
    async def test_async_failure(self):
        """Test that async failures are logged and re-raised"""

        @track_analysis()
        async def broken():
            raise ValueError("bad interval")

        with capture_logs() as logs:
            with pytest.raises(ValueError, match="bad interval"):
                await broken()

        (failed,) = _events(logs, "analysis_failed")
        assert failed["error_type"] == "ValueError"

    def test_failure_tracking_disabled(self):
        """Test that track_errors=False keeps failures out of the log"""

        @track_analysis(track_errors=False)
        def broken():
            raise ValueError("bad interval")

        with capture_logs() as logs:
            with pytest.raises(ValueError):
                broken()

        assert not _events(logs, "analysis_failed")

    def test_broken_extractor_is_ignored(self):
        """Test that a failing context extractor does not fail the call"""

        @track_analysis(extract_context=lambda args, kwargs, result: {"n": result["missing"]})
        def value():
            return {}

        assert value() == {}


class TestThresholdStamping:
    """Test stamping explicit thresholds into results"""

    def test_explicit_keywords_stamped(self):
        """Test that only keywords passed explicitly are stamped, as strings"""

        @track_analysis(stamp=keyword_thresholds("alpha", "horizon"))
        def summed(alpha=0.0, horizon=10):
            return LengthSumReport(exponent=1.0 + alpha, total=1.0, tail=0.0, cauchy=True, terms=1)

        report = summed(alpha=0.25)
        assert report.hypotheses == {"alpha": "0.25"}
        assert summed().hypotheses == {}

    def test_non_model_results_untouched(self):
        """Test that plain results pass through stamping unchanged"""

        @track_analysis(stamp=keyword_thresholds("alpha"))
        def plain(alpha=0.0):
            return [alpha]

        assert plain(alpha=1.0) == [1.0]


class TestExtractors:
    """Test helper extractors"""

    def test_count_items(self):
        """Test counting list results and the first list field of a model"""
        report = LengthSumReport(exponent=1.0, total=1.0, tail=0.0, cauchy=True, terms=1)
        assert count_items((), {}, [1, 2]) == {"items": 2}
        assert count_items((), {}, "text") == {}
        assert count_items((), {}, report) == {}
