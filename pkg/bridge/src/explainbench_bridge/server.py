"""Bridge server: wraps one explainer behind the line protocol.

The server never sees model internals. When the wrapped explainer needs
predictions it emits a ``predict_request`` and blocks until the host's
``predict_response`` arrives, keeping every wrapped package honest about
black-box access. Runs until stdin reaches EOF.
"""

from __future__ import annotations

import sys
import time
import traceback

import numpy as np

from .protocol import (
    PROTOCOL_VERSION,
    ProtocolError,
    decode_matrix,
    decode_vector,
    dump_line,
    encode_matrix,
    message,
    parse_line,
)


class PredictProxy:
    """Callable prediction oracle backed by host round-trips."""

    def __init__(self, transport):
        self._transport = transport

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        reply = self._transport.request(
            "predict_request", {"x": encode_matrix(x)}, expect="predict_response"
        )
        return decode_vector(reply["payload"]["y"])


def explain_echo(train_x, train_y, test_x, options, predict):
    return test_x.copy()


def explain_probe_predictions(train_x, train_y, test_x, options, predict):
    # round-trips the host's predictions back as attributions, one value
    # tiled across the feature axis
    preds = predict(test_x)
    return np.tile(preds[:, None], (1, test_x.shape[1]))


def explain_random(train_x, train_y, test_x, options, predict):
    rng = np.random.default_rng(int(options.get("seed", 0)))
    return rng.standard_normal(test_x.shape)


def explain_sleepy(train_x, train_y, test_x, options, predict):
    time.sleep(float(options.get("sleep_seconds", 3600.0)))
    return np.zeros_like(test_x)


def explain_crash(train_x, train_y, test_x, options, predict):
    raise RuntimeError("intentional failure fixture")


def explain_shap_kernel(train_x, train_y, test_x, options, predict):
    import shap  # noqa: PLC0415  (optional ecosystem package)

    background = shap.sample(train_x, int(options.get("background_size", 100)))
    explainer = shap.KernelExplainer(lambda rows: predict(rows), background)
    values = explainer.shap_values(test_x, nsamples=int(options.get("nsamples", 2048)))
    return np.asarray(values, dtype=np.float64)


def explain_lime_tabular(train_x, train_y, test_x, options, predict):
    from lime.lime_tabular import LimeTabularExplainer  # noqa: PLC0415

    explainer = LimeTabularExplainer(
        train_x, mode="regression", discretize_continuous=True
    )
    dims = train_x.shape[1]
    out = np.zeros_like(test_x)
    for i, row in enumerate(test_x):
        exp = explainer.explain_instance(row, lambda r: predict(r), num_features=dims)
        for feature_idx, weight in exp.as_map()[0 if 0 in exp.as_map() else 1]:
            out[i, feature_idx] = weight
    return out


EXPLAINERS = {
    "echo": explain_echo,
    "probe_predictions": explain_probe_predictions,
    "random": explain_random,
    "sleepy": explain_sleepy,
    "crash": explain_crash,
    "shap_kernel": explain_shap_kernel,
    "lime_tabular": explain_lime_tabular,
}


class ServerTransport:
    def __init__(self, stdin, stdout):
        self._stdin = stdin
        self._stdout = stdout
        self._next_id = 1

    def send(self, msg: dict) -> None:
        self._stdout.write(dump_line(msg) + "\n")
        self._stdout.flush()

    def read(self) -> dict | None:
        line = self._stdin.readline()
        if not line:
            return None
        line = line.strip()
        if not line:
            return self.read()
        return parse_line(line)

    def request(self, kind: str, payload: dict, expect: str) -> dict:
        msg_id = self._next_id
        self._next_id += 1
        self.send(message(kind, msg_id, payload))
        reply = self.read()
        if reply is None:
            raise ProtocolError("host closed the stream mid-request")
        if reply["kind"] != expect or reply["id"] != msg_id:
            raise ProtocolError(
                f"expected {expect} id={msg_id}, got {reply['kind']} id={reply['id']}"
            )
        return reply


def serve_explainer(explainer_name: str, stdin=None, stdout=None) -> int:
    """Serve ``explainer_name`` over stdio until EOF. Returns an exit code."""
    if explainer_name not in EXPLAINERS:
        sys.stderr.write(
            f"unknown explainer {explainer_name!r}; choices: {sorted(EXPLAINERS)}\n"
        )
        return 2
    transport = ServerTransport(stdin or sys.stdin, stdout or sys.stdout)
    explain = EXPLAINERS[explainer_name]
    while True:
        try:
            msg = transport.read()
        except ProtocolError as exc:
            transport.send(message("error", -1, {"message": str(exc), "traceback": ""}))
            return 1
        if msg is None:
            return 0
        if msg["kind"] == "hello":
            if msg.get("version") != PROTOCOL_VERSION:
                transport.send(
                    message(
                        "error",
                        msg["id"],
                        {
                            "message": f"version mismatch: host {msg.get('version')}, "
                            f"bridge {PROTOCOL_VERSION}",
                            "traceback": "",
                        },
                    )
                )
                return 1
            transport.send(message("hello", msg["id"], version=PROTOCOL_VERSION))
            continue
        if msg["kind"] != "explain_request":
            transport.send(
                message(
                    "error",
                    msg["id"],
                    {"message": f"unexpected {msg['kind']}", "traceback": ""},
                )
            )
            continue
        payload = msg["payload"]
        try:
            train_x = decode_matrix(payload["train_x"])
            train_y = decode_vector(payload["train_y"])
            test_x = decode_matrix(payload["test_x"])
            options = payload.get("options", {})
            weights = explain(train_x, train_y, test_x, options, PredictProxy(transport))
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != test_x.shape:
                raise ProtocolError(
                    f"explainer returned shape {weights.shape}, want {test_x.shape}"
                )
            transport.send(
                message("attributions", msg["id"], {"weights": encode_matrix(weights)})
            )
        except Exception as exc:  # noqa: BLE001 - all failures go to the host
            transport.send(
                message(
                    "error",
                    msg["id"],
                    {"message": str(exc), "traceback": traceback.format_exc()},
                )
            )
