"""Subprocess adapter exposing ecosystem explainers to the benchmark harness."""

__version__ = "0.1.0"

from .host import BridgeClient, BridgeError, BridgeTimeout, invoke_bridge_explainer  # noqa: F401
from .protocol import PROTOCOL_VERSION, ProtocolError  # noqa: F401
from .server import EXPLAINERS, serve_explainer  # noqa: F401
