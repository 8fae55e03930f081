# Session-wide scratch directory and the opt-in switch for long-running tests.
# Tests marked `slow` (toy training to convergence, a full-size forward pass)
# only run with UNETR_SLOW=1.

import os
import tempfile

import pytest

tmpdir = tempfile.TemporaryDirectory(prefix='unetr-tests-')


def pytest_sessionstart(session):
    os.environ.setdefault('UNETR_TEST_TMP', tmpdir.name)


def pytest_collection_modifyitems(config, items):
    if os.environ.get('UNETR_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason='set UNETR_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def pytest_sessionfinish(session):
    tmpdir.cleanup()
