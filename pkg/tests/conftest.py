from pathlib import Path

import pytest

from cbcast.core import StampedMessage, VectorTime
from cbcast.protocol import CbcastProcess

DATA = Path(__file__).parent / "data"


def start(roster, pid):
    p = CbcastProcess()
    p.prot_start(roster, pid)
    return p


def msg(orig, view=0, payload="x", **vt):
    return StampedMessage(payload, orig, view, VectorTime(vt))


@pytest.fixture
def data_dir():
    return DATA
