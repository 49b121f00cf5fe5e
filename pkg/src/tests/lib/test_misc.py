import logging
import os

import numpy as np
import pytest

import lib.glob as glob
glob.TEST_INSTANCE = True

from lib.misc import atomic_write, canonical, ensuredir
from lib.misc.log import ColoredFormatter, get_logger
from lib.misc.random import STREAMS, RandomStreams


def test_atomic_write_replaces_the_file(tmpdir):
    path = os.path.join(str(tmpdir), "nested", "out.txt")
    with atomic_write(path) as f:
        f.write("first")
    with atomic_write(path) as f:
        f.write("second")
    with open(path) as f:
        assert f.read() == "second"
    assert os.listdir(os.path.dirname(path)) == ["out.txt"]


def test_atomic_write_keeps_the_old_file_on_error(tmpdir):
    path = os.path.join(str(tmpdir), "out.txt")
    with atomic_write(path) as f:
        f.write("kept")
    with pytest.raises(RuntimeError):
        with atomic_write(path) as f:
            f.write("lost")
            raise RuntimeError("interrupted")
    with open(path) as f:
        assert f.read() == "kept"
    assert os.listdir(str(tmpdir)) == ["out.txt"]


def test_ensuredir(tmpdir):
    path = os.path.join(str(tmpdir), "a", "b")
    ensuredir(path)
    ensuredir(path)
    assert os.path.isdir(path)


def test_canonical_sorts_keys():
    assert list(canonical({"b": 1, "a": {"d": 2, "c": (3, 4)}})) == ["a", "b"]
    assert canonical({"b": 1, "a": {"d": 2, "c": (3, 4)}})["a"] == {"c": [3, 4], "d": 2}


def test_streams_are_independent_and_reproducible():
    streams = RandomStreams(1)
    draws = {name: getattr(streams, name).standard_normal(3) for name in STREAMS}
    again = RandomStreams(1)
    for name in STREAMS:
        np.testing.assert_array_equal(getattr(again, name).standard_normal(3), draws[name])
    assert not np.allclose(draws["filter"], draws["gp"])


def test_fork_and_sample():
    base = RandomStreams(2)
    a, b = base.fork(0), base.fork(0)
    assert a.filter.standard_normal() == b.filter.standard_normal()
    assert base.fork(1).filter.standard_normal() != base.fork(0).filter.standard_normal()
    assert a.sample(1).epoch == 0
    assert a.sample(1).gp.standard_normal() != base.fork(0).gp.standard_normal()


def test_logger_namespace():
    logger = get_logger("lib.training")
    assert logger.name == "egp.training"
    record = logging.LogRecord("egp.x", logging.WARNING, "", 0, "diverged", None, None)
    assert ColoredFormatter(color=False).format(record) == "WARNING egp.x: diverged"
