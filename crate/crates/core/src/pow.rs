//! SHA-256 leading-zero-bits proof of work.
//!
//! A challenge is a random byte string plus a difficulty. The solver scans
//! `solver_nonce = 0, 1, 2, ...` until `SHA-256(nonce_bytes || solver_nonce_be)`
//! starts with at least `difficulty` zero bits. Verification is one hash.

use std::cell::Cell;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAX_DIFFICULTY: u32 = 256;
pub const DIGEST_LEN: usize = 32;

thread_local! {
    static HASHES: Cell<u64> = const { Cell::new(0) };
}

/// Number of proof-of-work hashes computed on this thread so far.
pub fn hash_count() -> u64 {
    HASHES.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PowChallenge {
    pub nonce_bytes: Vec<u8>,
    /// Required number of leading zero bits.
    pub difficulty: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PowProof {
    pub solver_nonce: u64,
    pub digest: [u8; DIGEST_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOutcome {
    Solved { proof: PowProof, iterations: u64 },
    Exhausted { iterations: u64 },
}

impl SolveOutcome {
    pub fn iterations(&self) -> u64 {
        match *self {
            SolveOutcome::Solved { iterations, .. } | SolveOutcome::Exhausted { iterations } => {
                iterations
            }
        }
    }

    pub fn proof(&self) -> Option<PowProof> {
        match *self {
            SolveOutcome::Solved { proof, .. } => Some(proof),
            SolveOutcome::Exhausted { .. } => None,
        }
    }
}

pub fn make_challenge<R: RngCore + ?Sized>(
    rng: &mut R,
    size_bytes: usize,
    difficulty: u32,
) -> Result<PowChallenge> {
    if size_bytes == 0 {
        return Err(Error::InvalidInput(
            "challenge size must be at least 1 byte".into(),
        ));
    }
    if difficulty > MAX_DIFFICULTY {
        return Err(Error::InvalidInput(format!(
            "difficulty {difficulty} exceeds {MAX_DIFFICULTY}"
        )));
    }
    let mut nonce_bytes = vec![0u8; size_bytes];
    rng.fill_bytes(&mut nonce_bytes);
    Ok(PowChallenge {
        nonce_bytes,
        difficulty,
    })
}

pub fn digest_for(nonce_bytes: &[u8], solver_nonce: u64) -> [u8; DIGEST_LEN] {
    HASHES.with(|h| h.set(h.get() + 1));
    let mut hasher = Sha256::new();
    hasher.update(nonce_bytes);
    hasher.update(solver_nonce.to_be_bytes());
    hasher.finalize().into()
}

pub fn leading_zero_bits(digest: &[u8]) -> u32 {
    let mut bits = 0;
    for &byte in digest {
        if byte == 0 {
            bits += 8;
        } else {
            bits += byte.leading_zeros();
            break;
        }
    }
    bits
}

pub fn solve(challenge: &PowChallenge, max_iterations: u64) -> SolveOutcome {
    for solver_nonce in 0..max_iterations {
        let digest = digest_for(&challenge.nonce_bytes, solver_nonce);
        if leading_zero_bits(&digest) >= challenge.difficulty {
            return SolveOutcome::Solved {
                proof: PowProof {
                    solver_nonce,
                    digest,
                },
                iterations: solver_nonce + 1,
            };
        }
    }
    SolveOutcome::Exhausted {
        iterations: max_iterations,
    }
}

/// Recomputes the digest; the `digest` carried in the proof is only trusted
/// if it matches.
pub fn verify_proof(challenge: &PowChallenge, proof: &PowProof) -> bool {
    if challenge.difficulty > MAX_DIFFICULTY {
        return false;
    }
    let digest = digest_for(&challenge.nonce_bytes, proof.solver_nonce);
    digest == proof.digest && leading_zero_bits(&digest) >= challenge.difficulty
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn same_rng_state_same_challenge() {
        let a = make_challenge(&mut ChaCha8Rng::seed_from_u64(9), 32, 8).unwrap();
        let b = make_challenge(&mut ChaCha8Rng::seed_from_u64(9), 32, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nonce_bytes.len(), 32);
        assert_eq!(a.difficulty, 8);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_challenge(&mut rng, 32, 257).is_err());
        assert!(make_challenge(&mut rng, 0, 1).is_err());
        assert!(make_challenge(&mut rng, 1, 256).is_ok());
    }

    #[test]
    fn leading_zero_bit_count() {
        assert_eq!(leading_zero_bits(&[0xff]), 0);
        assert_eq!(leading_zero_bits(&[0x01]), 7);
        assert_eq!(leading_zero_bits(&[0x00, 0x80]), 8);
        assert_eq!(leading_zero_bits(&[0x00, 0x00, 0x10]), 19);
        assert_eq!(leading_zero_bits(&[0u8; 32]), 256);
    }

    #[test]
    fn difficulty_zero_accepts_first_nonce() {
        let c = PowChallenge {
            nonce_bytes: vec![1, 2, 3],
            difficulty: 0,
        };
        let out = solve(&c, 10);
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.proof().unwrap().solver_nonce, 0);
        assert!(verify_proof(&c, &out.proof().unwrap()));
    }

    #[test]
    fn solved_proofs_verify_and_tampering_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = make_challenge(&mut rng, 16, 10).unwrap();
        let proof = solve(&c, 1 << 20).proof().unwrap();
        assert!(verify_proof(&c, &proof));
        assert!(leading_zero_bits(&proof.digest) >= 10);

        let forged = PowProof {
            digest: [0; DIGEST_LEN],
            ..proof
        };
        assert!(!verify_proof(&c, &forged));

        let shifted = PowProof {
            solver_nonce: proof.solver_nonce + 1,
            ..proof
        };
        assert!(!verify_proof(&c, &shifted));
    }

    #[test]
    fn correct_digest_but_unmet_difficulty() {
        let c = PowChallenge {
            nonce_bytes: vec![7; 8],
            difficulty: 0,
        };
        // find a nonce whose digest has no leading zero bit, then raise difficulty
        let nonce = (0..)
            .find(|&n| leading_zero_bits(&digest_for(&c.nonce_bytes, n)) == 0)
            .unwrap();
        let proof = PowProof {
            solver_nonce: nonce,
            digest: digest_for(&c.nonce_bytes, nonce),
        };
        assert!(verify_proof(&c, &proof));
        let harder = PowChallenge { difficulty: 1, ..c };
        assert!(!verify_proof(&harder, &proof));
    }

    #[test]
    fn exhaustion_at_high_difficulty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut exhausted = 0;
        for _ in 0..200 {
            let c = make_challenge(&mut rng, 32, 16).unwrap();
            if matches!(solve(&c, 10), SolveOutcome::Exhausted { iterations: 10 }) {
                exhausted += 1;
            }
        }
        // P(success per trial) ~ 10 * 2^-16
        assert!(exhausted >= 199);
    }

    #[test]
    fn verification_costs_one_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [0, 4, 8, 12] {
            let c = make_challenge(&mut rng, 32, d).unwrap();
            let proof = solve(&c, 1 << 20).proof().unwrap();
            let before = hash_count();
            assert!(verify_proof(&c, &proof));
            assert_eq!(hash_count() - before, 1);
        }
    }

    #[test]
    fn solve_iterations_are_counted_hashes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = make_challenge(&mut rng, 32, 6).unwrap();
        let before = hash_count();
        let out = solve(&c, 1 << 20);
        assert_eq!(hash_count() - before, out.iterations());
    }
}
