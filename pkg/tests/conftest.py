"""Shared fixtures: one small synthetic instance reused across solver tests."""

from __future__ import annotations

import pytest

from robustfair.dataset import demo_synth_params, synth_generate


@pytest.fixture
def desk_ds():
    """Stock generator config shrunk to 24 rows and 3 features."""
    return synth_generate(demo_synth_params(seed=0, m=12, n2=12, p=3))
