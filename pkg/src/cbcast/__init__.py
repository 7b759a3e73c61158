"""Virtually synchronous causal multicast (corrected CBCAST) with a
deterministic simulator and trace checkers."""

from .core import (
    CbcastError,
    ConfigurationError,
    CounterPair,
    DecodeError,
    DonationBody,
    InvariantViolation,
    MessageId,
    Notification,
    Packet,
    ProtocolViolation,
    ScenarioError,
    StampedMessage,
    VectorTime,
    WaitRecord,
    decode,
    encode,
)
from .protocol import CbcastProcess, ProcessState
from .scenario import Scenario, generate_scenarios, load_scenario, parse_scenario
from .simnet import RunResult, Simulator, run_scenario

__version__ = "0.1.0"
