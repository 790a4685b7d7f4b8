//! Python bindings: keys, signatures, proof-of-work, the envelope codec and
//! the simulator.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use konnektor_core::identity::{self, generate_keypair, PeerAddress, Signature};
use konnektor_core::pow;
use konnektor_core::sim::{run_simulation as run_core, SimConfig};
use konnektor_core::trace;
use konnektor_core::wire::{self, EventPayload};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn address(bytes: &[u8]) -> PyResult<PeerAddress> {
    PeerAddress::from_slice(bytes).map_err(value_err)
}

/// An ed25519 identity. The public key is the peer address.
#[pyclass(frozen)]
struct Keypair(identity::Keypair);

#[pymethods]
impl Keypair {
    /// `seed` must be exactly 32 bytes; omit it for a random key.
    #[new]
    #[pyo3(signature = (seed=None))]
    fn new(seed: Option<Vec<u8>>) -> PyResult<Self> {
        match seed {
            Some(seed) => generate_keypair(&seed).map(Keypair).map_err(value_err),
            None => Ok(Keypair(identity::Keypair::random())),
        }
    }

    #[getter]
    fn address<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.address().as_bytes())
    }

    #[getter]
    fn address_hex(&self) -> String {
        self.0.address().to_hex()
    }

    #[getter]
    fn secret<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.secret_bytes())
    }

    fn sign<'py>(&self, py: Python<'py>, message: &[u8]) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.sign(message).as_bytes())
    }

    fn __repr__(&self) -> String {
        format!("Keypair({})", self.0.address().short())
    }
}

/// True iff `signature` is valid for `message` under `address`. Malformed
/// inputs give False rather than raising.
#[pyfunction]
fn verify(address: &[u8], message: &[u8], signature: &[u8]) -> bool {
    match (
        PeerAddress::from_slice(address),
        Signature::from_slice(signature),
    ) {
        (Ok(a), Ok(s)) => identity::verify(&a, message, &s),
        _ => false,
    }
}

/// Random bytes plus a required count of leading zero bits.
#[pyclass(frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PowChallenge(pow::PowChallenge);

#[pymethods]
impl PowChallenge {
    #[new]
    fn new(nonce_bytes: Vec<u8>, difficulty: u32) -> PyResult<Self> {
        if nonce_bytes.is_empty() {
            return Err(value_err("nonce_bytes must not be empty"));
        }
        if difficulty > pow::MAX_DIFFICULTY {
            return Err(value_err(format!(
                "difficulty above {}",
                pow::MAX_DIFFICULTY
            )));
        }
        Ok(PowChallenge(pow::PowChallenge {
            nonce_bytes,
            difficulty,
        }))
    }

    #[getter]
    fn nonce_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.nonce_bytes)
    }

    #[getter]
    fn difficulty(&self) -> u32 {
        self.0.difficulty
    }

    /// Solves by counting nonces up from 0. Returns
    /// `(solver_nonce, digest, iterations)` or None if `max_iterations` ran out.
    #[pyo3(signature = (max_iterations=1 << 24))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        max_iterations: u64,
    ) -> Option<(u64, Bound<'py, PyBytes>, u64)> {
        let out = pow::solve(&self.0, max_iterations);
        out.proof().map(|p| {
            (
                p.solver_nonce,
                PyBytes::new(py, &p.digest),
                out.iterations(),
            )
        })
    }

    /// One hash, regardless of difficulty.
    fn verify(&self, solver_nonce: u64, digest: &[u8]) -> PyResult<bool> {
        let digest: [u8; pow::DIGEST_LEN] = digest
            .try_into()
            .map_err(|_| value_err("digest must be 32 bytes"))?;
        Ok(pow::verify_proof(
            &self.0,
            &pow::PowProof {
                solver_nonce,
                digest,
            },
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "PowChallenge({} bytes, difficulty={})",
            self.0.nonce_bytes.len(),
            self.0.difficulty
        )
    }
}

/// Leading zero bits of SHA-256(nonce_bytes || solver_nonce as big-endian u64).
#[pyfunction]
fn pow_difficulty_of(nonce_bytes: &[u8], solver_nonce: u64) -> u32 {
    pow::leading_zero_bits(&pow::digest_for(nonce_bytes, solver_nonce))
}

/// A signed protocol event.
#[pyclass(frozen)]
struct Envelope(wire::Envelope);

fn addresses(list: Vec<Vec<u8>>) -> PyResult<Vec<PeerAddress>> {
    list.iter().map(|b| address(b)).collect()
}

#[pymethods]
impl Envelope {
    #[staticmethod]
    fn connection_init(
        keypair: &Keypair,
        target_peers: Vec<Vec<u8>>,
        timestamp_ms: u64,
    ) -> PyResult<Self> {
        let payload = EventPayload::ConnectionInit {
            target_peers: addresses(target_peers)?,
        };
        payload.validate().map_err(value_err)?;
        Ok(Envelope(wire::Envelope::seal(
            &keypair.0,
            payload,
            timestamp_ms,
        )))
    }

    #[staticmethod]
    fn keep_alive(
        keypair: &Keypair,
        target_peers: Vec<Vec<u8>>,
        timestamp_ms: u64,
    ) -> PyResult<Self> {
        let payload = EventPayload::KeepAlive {
            target_peers: addresses(target_peers)?,
        };
        payload.validate().map_err(value_err)?;
        Ok(Envelope(wire::Envelope::seal(
            &keypair.0,
            payload,
            timestamp_ms,
        )))
    }

    #[staticmethod]
    fn requirement(keypair: &Keypair, challenge: &PowChallenge, timestamp_ms: u64) -> Self {
        let payload = EventPayload::ConnectionRequirement {
            challenge: challenge.0.clone(),
        };
        Envelope(wire::Envelope::seal(&keypair.0, payload, timestamp_ms))
    }

    /// Strict decode; raises ValueError on any malformed input.
    #[staticmethod]
    fn decode(data: &[u8]) -> PyResult<Self> {
        wire::Envelope::from_bytes(data)
            .map(Envelope)
            .map_err(value_err)
    }

    fn encode<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[getter]
    fn tag(&self) -> &'static str {
        self.0.tag().name()
    }

    #[getter]
    fn sender<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.sender.as_bytes())
    }

    #[getter]
    fn timestamp_ms(&self) -> u64 {
        self.0.timestamp_ms
    }

    #[getter]
    fn signature<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.signature.as_bytes())
    }

    /// Target list for ConnectionInit and KeepAlive, None otherwise.
    #[getter]
    fn target_peers<'py>(&self, py: Python<'py>) -> Option<Vec<Bound<'py, PyBytes>>> {
        self.0
            .payload
            .target_peers()
            .map(|ts| ts.iter().map(|a| PyBytes::new(py, a.as_bytes())).collect())
    }

    fn has_valid_signature(&self) -> bool {
        self.0.has_valid_signature()
    }

    fn __eq__(&self, other: &Envelope) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Envelope({}, sender={}, ts={})",
            self.0.tag().name(),
            self.0.sender.short(),
            self.0.timestamp_ms
        )
    }
}

/// Outcome of one simulator run.
#[pyclass(frozen)]
struct SimResult {
    #[pyo3(get)]
    trace_hash: String,
    #[pyo3(get)]
    uniqueness_verdict: bool,
    /// The report as a JSON document.
    #[pyo3(get)]
    report_json: String,
    /// Trace records, one JSON object per line.
    #[pyo3(get)]
    trace: Vec<String>,
}

/// Runs a simulation described by a TOML document.
#[pyfunction]
#[pyo3(signature = (config_toml, seed=None))]
fn run_simulation(py: Python<'_>, config_toml: &str, seed: Option<u64>) -> PyResult<SimResult> {
    let mut cfg = SimConfig::from_toml_str(config_toml).map_err(value_err)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = py.detach(|| run_core(&cfg)).map_err(value_err)?;
    Ok(SimResult {
        trace_hash: report.trace_hash.clone(),
        uniqueness_verdict: report.uniqueness_verdict,
        report_json: report.summary_json(),
        trace: report.trace,
    })
}

/// Re-checks trace lines. Returns the recomputed uniqueness verdict or
/// raises ValueError citing the first bad line.
#[pyfunction]
fn verify_trace(lines: Vec<String>) -> PyResult<bool> {
    trace::verify_trace(&lines)
        .map(|s| s.uniqueness_verdict)
        .map_err(value_err)
}

#[pymodule]
pub fn konnektor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Keypair>()?;
    m.add_class::<PowChallenge>()?;
    m.add_class::<Envelope>()?;
    m.add_class::<SimResult>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(pow_difficulty_of, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(verify_trace, m)?)?;
    m.add("HEADER_LEN", wire::HEADER_LEN)?;
    Ok(())
}
