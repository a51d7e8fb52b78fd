"""Host side: spawn a bridge subprocess and drive the protocol.

The host owns the model. Bridge-side ``predict_request`` messages are
answered from a caller-supplied prediction function, and the final
``attributions`` message is converted into the same arrays the native
explainers produce, so downstream metric code cannot tell them apart.
"""

from __future__ import annotations

import queue
import subprocess
import threading
import time

import numpy as np

from .protocol import (
    ProtocolError,
    decode_matrix,
    dump_line,
    encode_matrix,
    encode_vector,
    hello,
    message,
    parse_line,
)


class BridgeError(RuntimeError):
    pass


class BridgeTimeout(BridgeError):
    pass


class _LineReader:
    """Background reader thread; lets the driver enforce a wall deadline."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)

    def next_line(self, deadline: float) -> str | None:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise BridgeTimeout("bridge subprocess timed out")
        try:
            return self._queue.get(timeout=remaining)
        except queue.Empty as exc:
            raise BridgeTimeout("bridge subprocess timed out") from exc


class BridgeClient:
    """One subprocess speaking protocol v1 over its stdio."""

    def __init__(self, command, timeout: float = 600.0):
        self.command = list(command)
        self.timeout = float(timeout)
        self._proc = None
        self._reader = None
        self._next_id = 1

    def __enter__(self):
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._reader = _LineReader(self._proc.stdout)
        return self

    def __exit__(self, *exc_info):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        return False

    def _send(self, msg: dict) -> None:
        try:
            self._proc.stdin.write(dump_line(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError("bridge subprocess closed its stdin") from exc

    def _read(self, deadline: float) -> dict:
        line = self._reader.next_line(deadline)
        if line is None:
            raise BridgeError("bridge subprocess closed its stdout")
        return parse_line(line.strip())

    def handshake(self, deadline: float) -> None:
        self._send(hello(0))
        reply = self._read(deadline)
        if reply["kind"] == "error":
            raise BridgeError(f"handshake rejected: {reply['payload']['message']}")
        if reply["kind"] != "hello" or reply["id"] != 0:
            raise ProtocolError(f"expected hello reply, got {reply['kind']}")

    def explain(
        self,
        train_features: np.ndarray,
        train_labels: np.ndarray,
        test_features: np.ndarray,
        predict_fn,
        options: dict | None = None,
    ) -> np.ndarray:
        deadline = time.monotonic() + self.timeout
        self.handshake(deadline)
        request_id = self._next_id
        self._next_id += 1
        self._send(
            message(
                "explain_request",
                request_id,
                {
                    "train_x": encode_matrix(train_features),
                    "train_y": encode_vector(train_labels),
                    "test_x": encode_matrix(test_features),
                    "options": options or {},
                },
            )
        )
        answered: set[int] = set()
        while True:
            msg = self._read(deadline)
            if msg["kind"] == "predict_request":
                if msg["id"] in answered:
                    raise ProtocolError(f"duplicate predict_request id {msg['id']}")
                answered.add(msg["id"])
                rows = decode_matrix(msg["payload"]["x"])
                preds = np.asarray(predict_fn(rows), dtype=np.float64).reshape(-1)
                if preds.shape[0] != rows.shape[0]:
                    raise BridgeError("predict_fn returned a misaligned vector")
                self._send(
                    message("predict_response", msg["id"], {"y": encode_vector(preds)})
                )
                continue
            if msg["kind"] == "attributions":
                if msg["id"] != request_id:
                    raise ProtocolError(
                        f"attributions for unknown request id {msg['id']}"
                    )
                weights = decode_matrix(msg["payload"]["weights"])
                if weights.shape != np.asarray(test_features).shape:
                    raise BridgeError(
                        f"attribution shape {weights.shape} does not match the test matrix"
                    )
                return weights
            if msg["kind"] == "error":
                raise BridgeError(
                    f"bridge explainer failed: {msg['payload']['message']}\n"
                    f"{msg['payload'].get('traceback', '')}"
                )
            raise ProtocolError(f"unsolicited {msg['kind']} message")


def invoke_bridge_explainer(
    command,
    train_features,
    train_labels,
    test_features,
    predict_fn,
    options: dict | None = None,
    timeout: float = 600.0,
) -> np.ndarray:
    """Run one bridge explainer end to end; returns (n_test, D) weights.

    Raises BridgeTimeout or BridgeError on failure; the subprocess is always
    reaped, so a dead cell never blocks the rest of a run.
    """
    with BridgeClient(command, timeout) as client:
        return client.explain(
            np.asarray(train_features, dtype=np.float64),
            np.asarray(train_labels, dtype=np.float64),
            np.asarray(test_features, dtype=np.float64),
            predict_fn,
            options,
        )
