import numpy as np
import pytest

from explainbench_bridge.protocol import (
    PROTOCOL_VERSION,
    ProtocolError,
    decode_matrix,
    decode_vector,
    dump_line,
    encode_matrix,
    encode_vector,
    hello,
    message,
    parse_line,
)


def test_vector_round_trip_is_bit_exact():
    rng = np.random.default_rng(0)
    values = rng.normal(size=1000) * 10.0 ** rng.integers(-300, 300, size=1000)
    assert np.array_equal(decode_vector(encode_vector(values)), values)


def test_matrix_round_trip_is_bit_exact():
    rng = np.random.default_rng(1)
    mat = rng.normal(size=(64, 7))
    assert np.array_equal(decode_matrix(encode_matrix(mat)), mat)


def test_numbers_travel_as_decimal_strings():
    encoded = encode_vector([1.0 / 3.0])
    assert isinstance(encoded[0], str)
    assert float(encoded[0]) == 1.0 / 3.0


def test_message_and_parse_round_trip():
    msg = message("predict_request", 7, {"x": [["1.0"]]})
    parsed = parse_line(dump_line(msg))
    assert parsed == msg


def test_hello_carries_version():
    assert hello()["version"] == PROTOCOL_VERSION


def test_parse_rejects_garbage():
    with pytest.raises(ProtocolError):
        parse_line("not json")
    with pytest.raises(ProtocolError):
        parse_line('{"kind": "nonsense", "id": 1}')
    with pytest.raises(ProtocolError):
        parse_line('{"no_kind": true}')
    with pytest.raises(ProtocolError):
        message("nonsense", 0)
