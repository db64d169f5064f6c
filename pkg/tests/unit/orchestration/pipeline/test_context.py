"""
Unit tests for RunContext

Tests:
- Context initialization
- State management (get/set/has/require)
- Stage tracking and timing
- Run directory and seeded generators
- Summary generation
"""

import numpy as np
import pytest

from tailcal.orchestration.pipeline import RunContext
from tailcal.services.errors import TailCalError


# ============================================================================
# FIXTURES
# ============================================================================

@pytest.fixture
def sample_config():
    return {"data": {"threshold": 12.5}, "system": {"seed": 3}}


@pytest.fixture
def context(sample_config):
    return RunContext(command="train", config=sample_config, seed=3)


# ============================================================================
# TESTS
# ============================================================================

class TestContextInitialization:
    """Test RunContext initialization."""

    def test_create_basic_context(self, sample_config):
        """Test required fields and defaults."""
        context = RunContext(command="evaluate", config=sample_config)

        assert context.command == "evaluate"
        assert context.seed == 0
        assert context.out_dir is None
        assert context.output is None
        assert context.get_completed_stages() == []


class TestStateManagement:
    """Test stage state."""

    def test_set_and_get(self, context):
        """Test stored values come back."""
        context.set("train", [1, 2])

        assert context.get("train") == [1, 2]
        assert context.has("train")
        assert context.get("test", "missing") == "missing"

    def test_require_missing(self, context):
        """Test a missing stage input names the key."""
        with pytest.raises(TailCalError) as exc_info:
            context.require("model")

        assert exc_info.value.context["key"] == "model"

    def test_options(self, sample_config):
        """Test command options are separate from state."""
        context = RunContext(command="train", config=sample_config, options={"family": "drn"})

        assert context.option("family") == "drn"
        assert context.option("baseline") is None
        assert not context.has("family")


class TestStageTracking:
    """Test stage completion and timing."""

    def test_mark_complete_once(self, context):
        """Test stages are recorded once, in order."""
        context.mark_stage_complete("load_data", 0.5)
        context.mark_stage_complete("train", 1.5)
        context.mark_stage_complete("load_data")

        assert context.get_completed_stages() == ["load_data", "train"]
        assert context.is_stage_complete("train")
        assert context.get_stage_timing("train") == 1.5
        assert context.get_total_duration() == pytest.approx(2.0)

    def test_summary(self, context):
        """Test the summary lists stages and state keys."""
        context.set("train", 1)
        context.mark_stage_complete("load_data")

        summary = context.summary()

        assert summary["command"] == "train"
        assert summary["completed_stages"] == ["load_data"]
        assert summary["state_keys"] == ["train"]
        assert "train" in repr(context)


class TestRunDirectory:
    """Test output and seeding helpers."""

    def test_output_created_lazily(self, sample_config, tmp_path):
        """Test the run directory writer is shared."""
        context = RunContext(command="train", config=sample_config, out_dir=tmp_path)

        assert context.output is context.output
        assert context.output.root == tmp_path

    def test_rng_offsets(self, context):
        """Test generators are seeded from seed + offset."""
        a = context.rng(1).random()
        b = np.random.default_rng(4).random()

        assert a == b
