use pyo3::ffi::c_str;
use pyo3::prelude::*;

use konnektor::konnektor;

#[test]
fn module_runs_in_an_embedded_interpreter() {
    pyo3::append_to_inittab!(konnektor);
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import konnektor
kp = konnektor.Keypair(bytes(32))
env = konnektor.Envelope.keep_alive(kp, [bytes([9]) * 32], 1_700_000_000_000)
raw = env.encode()
assert len(raw) == konnektor.HEADER_LEN + 4 + 32
assert konnektor.Envelope.decode(raw).has_valid_signature()
ch = konnektor.PowChallenge(b"abc", 6)
nonce, digest, _ = ch.solve()
assert ch.verify(nonce, digest)
r = konnektor.run_simulation('duration_ms = 10000\n[[scenario.actions]]\nat_ms = 1\nactor = "peer0"\naction = { kind = "join", targets = ["peer1"] }\n')
assert r.uniqueness_verdict and konnektor.verify_trace(r.trace)
"#
            ),
            None,
            None,
        )
        .unwrap();
    });
}
