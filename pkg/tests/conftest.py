from __future__ import annotations

from pathlib import Path

import pytest

from cotcap.backends import BackendConfig, Gateway, MockBackend
from cotcap.models import PairRecord, VideoRef

FIXTURES = Path(__file__).parent / "fixtures"


def make_corpus(n: int, split: str = "train", frames: int | None = 48) -> list[PairRecord]:
    return [
        PairRecord(VideoRef(f"vid{i:04d}", f"videos/vid{i:04d}.mp4", frames), f"a dog barks and a man speaks number {i}", split)
        for i in range(n)
    ]


def mock_config(name: str, **kw) -> BackendConfig:
    options = kw.pop("options", {})
    return BackendConfig(name=name, kind="mock", options=options, **kw)


@pytest.fixture
def corpus_factory():
    return make_corpus


@pytest.fixture
def gateway_factory(tmp_path: Path):
    """Build a gateway with mock ``vlm`` and ``llm`` backends.

    Returns (gateway, {"vlm": MockBackend, "llm": MockBackend}).
    """

    def build(*, cache: bool = True, cache_dir: Path | None = None, responders: dict | None = None, **cfg_kw):
        responders = responders or {}
        gw = Gateway(cache_dir=(cache_dir or tmp_path / "cache") if cache else None, sleep=lambda s: None)
        mocks = {}
        for name in ("vlm", "llm"):
            mocks[name] = gw.register(mock_config(name, **cfg_kw), None)
            if name in responders:
                mocks[name].responder = responders[name]
        return gw, mocks

    return build


def mock_backend(name: str = "mock", **kw) -> MockBackend:
    return MockBackend(mock_config(name, **kw))


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
