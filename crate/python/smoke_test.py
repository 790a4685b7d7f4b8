"""Smoke test for the konnektor extension module.

Build and run from the repository root:

    cargo build --release -p konnektor-py
    cp target/release/libkonnektor.so python/konnektor.so
    python3 python/smoke_test.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import konnektor  # noqa: E402


def check_keys():
    seed = bytes(range(32))
    a, b = konnektor.Keypair(seed), konnektor.Keypair(seed)
    assert a.address == b.address and len(a.address) == 32
    assert len(a.address_hex) == 64
    sig = a.sign(b"hello")
    assert konnektor.verify(a.address, b"hello", sig)
    assert not konnektor.verify(a.address, b"hellp", sig)
    assert not konnektor.verify(b"short", b"hello", sig)
    try:
        konnektor.Keypair(b"\x00" * 31)
    except ValueError:
        pass
    else:
        raise AssertionError("31-byte seed accepted")
    return a


def check_pow():
    ch = konnektor.PowChallenge(b"\x42" * 32, 8)
    nonce, digest, iterations = ch.solve()
    assert iterations == nonce + 1
    assert ch.verify(nonce, digest)
    assert konnektor.pow_difficulty_of(ch.nonce_bytes, nonce) >= 8
    assert ch.solve(max_iterations=0) is None
    trivial = konnektor.PowChallenge(b"\x01", 0)
    assert trivial.solve()[2] == 1


def check_envelope(kp):
    other = konnektor.Keypair(b"\x07" * 32)
    env = konnektor.Envelope.connection_init(kp, [other.address], 1_700_000_000_000)
    raw = env.encode()
    assert len(raw) == konnektor.HEADER_LEN + 4 + 32
    assert raw[0] == 1
    back = konnektor.Envelope.decode(raw)
    assert back == env and back.tag == "ConnectionInit"
    assert back.has_valid_signature()
    assert back.target_peers == [other.address]

    flipped = bytearray(raw)
    flipped[9 + 32] ^= 1
    assert not konnektor.Envelope.decode(bytes(flipped)).has_valid_signature()
    try:
        konnektor.Envelope.decode(raw + b"\x00")
    except ValueError:
        pass
    else:
        raise AssertionError("trailing byte accepted")


CONFIG = """
seed = 4
num_honest_peers = 3
duration_ms = 40000

[[scenario.actions]]
at_ms = 100
actor = "peer0"
action = { kind = "join", targets = ["peer1"] }

[[scenario.actions]]
at_ms = 15000
actor = "peer0"
action = { kind = "duplicate_join", targets = ["peer2"] }
"""


def check_simulation():
    a = konnektor.run_simulation(CONFIG)
    b = konnektor.run_simulation(CONFIG)
    assert a.trace_hash == b.trace_hash
    assert a.uniqueness_verdict
    report = json.loads(a.report_json)
    dup = report["peers"]["peer0"]["address"]
    for name in ("peer1", "peer2"):
        assert all(e["address"] != dup for e in report["peers"][name]["book"])
    assert konnektor.verify_trace(a.trace) is True
    assert konnektor.run_simulation(CONFIG, seed=5).trace_hash != a.trace_hash
    try:
        konnektor.run_simulation("drop_probability = 2.0")
    except ValueError as e:
        assert "drop_probability" in str(e)
    else:
        raise AssertionError("bad config accepted")
    try:
        konnektor.verify_trace(a.trace[:-1])
    except ValueError:
        pass
    else:
        raise AssertionError("truncated trace accepted")


def main():
    kp = check_keys()
    check_pow()
    check_envelope(kp)
    check_simulation()
    print("smoke test ok")


if __name__ == "__main__":
    main()
