import subprocess
import sys

import pytest


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small corpus generated through the pipeline CLI (external interface)."""
    root = tmp_path_factory.mktemp("bridge_corpus")
    result = subprocess.run(
        [sys.executable, "-m", "maskpipe", "synth", "--out", str(root),
         "--scenes", "2", "--seed", "17", "--width", "160", "--height", "128", "--T", "1"],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr
    return root
