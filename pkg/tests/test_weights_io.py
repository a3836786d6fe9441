import struct

import numpy as np
import pytest

from mgsolve.learned import init_weights
from mgsolve.weights_io import WeightFileError, dumps, load_weights, loads, save_weights


def test_round_trip_is_bitwise(tmp_path):
    w = init_weights(4, seed=2)
    w.params["setup_resnet.1.bias"][:] = [np.pi, -0.0, 1e-300, np.inf]
    path = tmp_path / "w.mgcn"
    save_weights(w, path)
    back = load_weights(path)
    for name in w.names():
        assert back[name].tobytes() == w[name].tobytes()
    assert dumps(back) == path.read_bytes()


def test_layout():
    w = init_weights(1)
    buf = dumps(w)
    assert buf[:4] == b"MGCN"
    assert struct.unpack_from("<II", buf, 4) == (1, len(w))
    (name_len,) = struct.unpack_from("<H", buf, 12)
    assert buf[14:14 + name_len] == b"coef_rechannel"
    assert buf[14 + name_len] == 4
    assert struct.unpack_from("<4I", buf, 15 + name_len) == (1, 1, 3, 3)


def test_f32_weights_stored_as_f64():
    w = init_weights(2).astype(np.float32)
    assert loads(dumps(w))["k_up"].dtype == np.float64


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version"),
    (lambda b: b[:-5], "truncated"),
    (lambda b: b + b"\0", "trailing"),
    (lambda b: b[:4] + struct.pack("<II", 1, 0), "registry"),
    (lambda b: b[:6], "short"),
])
def test_rejects_bad_files(mutate, match):
    with pytest.raises(WeightFileError, match=match):
        loads(mutate(dumps(init_weights(2))))


def test_rejects_wrong_shape():
    w = init_weights(2)
    buf = dumps(w).replace(b"sol_rechannel", b"sol_rechannem")
    with pytest.raises(WeightFileError, match="registry"):
        loads(buf)
