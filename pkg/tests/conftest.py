from __future__ import annotations

import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
TOY = FIXTURES / "toy"
sys.path.insert(0, str(TOY))

from papercode.config import load_config  # noqa: E402
from papercode.llm import LLMGateway, ReplayMode, ReplayStore, ScriptedProvider  # noqa: E402


@pytest.fixture
def toy():
    return TOY


@pytest.fixture
def toy_config():
    return load_config(TOY / "config.toml")


@pytest.fixture
def replay_store():
    return ReplayStore(TOY / "replay.jsonl", ReplayMode.REPLAY)


@pytest.fixture
def scripted_gateway():
    """Factory: gateway whose analyst and coder share one scripted provider."""

    def make(script, **kwargs):
        provider = ScriptedProvider(script)
        store = ReplayStore(None, ReplayMode.PASSTHROUGH)
        gateway = LLMGateway(store, {"analyst": provider, "coder": provider}, sleep=lambda s: None, **kwargs)
        gateway.provider = provider
        return gateway

    return make
