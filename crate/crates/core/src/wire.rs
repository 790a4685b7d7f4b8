//! Event payloads, signed envelopes and their canonical binary encoding.
//!
//! Wire layout of an envelope (all integers big-endian):
//!
//! ```text
//! tag (1) | timestamp_ms (8) | sender (32) | signature (64) | payload
//! ```
//!
//! The signature covers `tag | timestamp_ms | payload`. Payload encodings:
//!
//! | event                         | payload                                          |
//! |-------------------------------|--------------------------------------------------|
//! | ConnectionInit, KeepAlive     | count (4) then `count` addresses of 32 bytes     |
//! | NewPeer, AlreadyConnected     | len (4) then a raw envelope                      |
//! | ConnectionRequirement         | len (4), challenge bytes, difficulty (4)         |
//! | ConnectionRequirementResponse | len (4), raw envelope, solver nonce (8), digest (32) |

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::identity::{self, Keypair, PeerAddress, Signature, ADDRESS_LEN, SIGNATURE_LEN};
use crate::pow::{PowChallenge, PowProof, DIGEST_LEN, MAX_DIFFICULTY};

pub const HEADER_LEN: usize = 1 + 8 + ADDRESS_LEN + SIGNATURE_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EventTag {
    ConnectionInit = 0x01,
    NewPeer = 0x02,
    ConnectionRequirement = 0x03,
    ConnectionRequirementResponse = 0x04,
    AlreadyConnected = 0x05,
    KeepAlive = 0x06,
}

impl EventTag {
    pub const ALL: [EventTag; 6] = [
        EventTag::ConnectionInit,
        EventTag::NewPeer,
        EventTag::ConnectionRequirement,
        EventTag::ConnectionRequirementResponse,
        EventTag::AlreadyConnected,
        EventTag::KeepAlive,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            EventTag::ConnectionInit => "ConnectionInit",
            EventTag::NewPeer => "NewPeer",
            EventTag::ConnectionRequirement => "ConnectionRequirement",
            EventTag::ConnectionRequirementResponse => "ConnectionRequirementResponse",
            EventTag::AlreadyConnected => "AlreadyConnected",
            EventTag::KeepAlive => "KeepAlive",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventPayload {
    ConnectionInit {
        target_peers: Vec<PeerAddress>,
    },
    NewPeer {
        init_envelope: Vec<u8>,
    },
    ConnectionRequirement {
        challenge: PowChallenge,
    },
    ConnectionRequirementResponse {
        requirement_raw_payload: Vec<u8>,
        proof: PowProof,
    },
    AlreadyConnected {
        evidence: Vec<u8>,
    },
    KeepAlive {
        target_peers: Vec<PeerAddress>,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input while reading {0}")]
    Truncated(&'static str),
    #[error("unknown event tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("target_peers list is empty")]
    EmptyTargets,
    #[error("target_peers list contains a duplicate address")]
    DuplicateTarget,
    #[error("challenge bytes are empty")]
    EmptyChallenge,
    #[error("difficulty {0} exceeds {MAX_DIFFICULTY}")]
    Difficulty(u32),
}

impl EventPayload {
    pub fn tag(&self) -> EventTag {
        match self {
            EventPayload::ConnectionInit { .. } => EventTag::ConnectionInit,
            EventPayload::NewPeer { .. } => EventTag::NewPeer,
            EventPayload::ConnectionRequirement { .. } => EventTag::ConnectionRequirement,
            EventPayload::ConnectionRequirementResponse { .. } => {
                EventTag::ConnectionRequirementResponse
            }
            EventPayload::AlreadyConnected { .. } => EventTag::AlreadyConnected,
            EventPayload::KeepAlive { .. } => EventTag::KeepAlive,
        }
    }

    /// The declared peer set of a ConnectionInit or KeepAlive.
    pub fn target_peers(&self) -> Option<&[PeerAddress]> {
        match self {
            EventPayload::ConnectionInit { target_peers }
            | EventPayload::KeepAlive { target_peers } => Some(target_peers),
            _ => None,
        }
    }

    /// Structural invariants shared by the encoder's callers and the decoder.
    pub fn validate(&self) -> Result<(), DecodeError> {
        match self {
            EventPayload::ConnectionInit { target_peers }
            | EventPayload::KeepAlive { target_peers } => check_targets(target_peers),
            EventPayload::ConnectionRequirement { challenge } => {
                if challenge.nonce_bytes.is_empty() {
                    Err(DecodeError::EmptyChallenge)
                } else if challenge.difficulty > MAX_DIFFICULTY {
                    Err(DecodeError::Difficulty(challenge.difficulty))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        match self {
            EventPayload::ConnectionInit { target_peers }
            | EventPayload::KeepAlive { target_peers } => {
                put_len(out, target_peers.len());
                for peer in target_peers {
                    out.extend_from_slice(peer.as_bytes());
                }
            }
            EventPayload::NewPeer { init_envelope: raw }
            | EventPayload::AlreadyConnected { evidence: raw } => put_blob(out, raw),
            EventPayload::ConnectionRequirement { challenge } => {
                put_blob(out, &challenge.nonce_bytes);
                out.extend_from_slice(&challenge.difficulty.to_be_bytes());
            }
            EventPayload::ConnectionRequirementResponse {
                requirement_raw_payload,
                proof,
            } => {
                put_blob(out, requirement_raw_payload);
                out.extend_from_slice(&proof.solver_nonce.to_be_bytes());
                out.extend_from_slice(&proof.digest);
            }
        }
    }

    fn decode_body(tag: EventTag, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let payload = match tag {
            EventTag::ConnectionInit | EventTag::KeepAlive => {
                let count = r.u32("target count")? as usize;
                // bound the allocation by what the input can actually hold
                if count > r.remaining() / ADDRESS_LEN {
                    return Err(DecodeError::Truncated("target_peers"));
                }
                let mut target_peers = Vec::with_capacity(count);
                for _ in 0..count {
                    target_peers.push(PeerAddress::from_bytes(r.array("target address")?));
                }
                if tag == EventTag::ConnectionInit {
                    EventPayload::ConnectionInit { target_peers }
                } else {
                    EventPayload::KeepAlive { target_peers }
                }
            }
            EventTag::NewPeer => EventPayload::NewPeer {
                init_envelope: r.blob("init_envelope")?.to_vec(),
            },
            EventTag::AlreadyConnected => EventPayload::AlreadyConnected {
                evidence: r.blob("evidence")?.to_vec(),
            },
            EventTag::ConnectionRequirement => {
                let nonce_bytes = r.blob("challenge bytes")?.to_vec();
                let difficulty = r.u32("difficulty")?;
                EventPayload::ConnectionRequirement {
                    challenge: PowChallenge {
                        nonce_bytes,
                        difficulty,
                    },
                }
            }
            EventTag::ConnectionRequirementResponse => {
                let requirement_raw_payload = r.blob("requirement_raw_payload")?.to_vec();
                let solver_nonce = u64::from_be_bytes(r.array("solver nonce")?);
                let digest: [u8; DIGEST_LEN] = r.array("digest")?;
                EventPayload::ConnectionRequirementResponse {
                    requirement_raw_payload,
                    proof: PowProof {
                        solver_nonce,
                        digest,
                    },
                }
            }
        };
        payload.validate()?;
        Ok(payload)
    }
}

fn check_targets(targets: &[PeerAddress]) -> Result<(), DecodeError> {
    if targets.is_empty() {
        return Err(DecodeError::EmptyTargets);
    }
    let mut seen = HashSet::with_capacity(targets.len());
    if !targets.iter().all(|t| seen.insert(*t)) {
        return Err(DecodeError::DuplicateTarget);
    }
    Ok(())
}

/// Order-insensitive comparison of two declared peer sets.
pub fn same_peer_set(a: &[PeerAddress], b: &[PeerAddress]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// The bytes a sender signs: `tag | timestamp_ms | payload`.
pub fn canonical_bytes(timestamp_ms: u64, payload: &EventPayload) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.push(payload.tag() as u8);
    out.extend_from_slice(&timestamp_ms.to_be_bytes());
    payload.encode_body(&mut out);
    out
}

/// Inverse of [`canonical_bytes`].
pub fn decode_canonical(bytes: &[u8]) -> Result<(u64, EventPayload), DecodeError> {
    let mut r = Reader::new(bytes);
    let tag_byte = r.u8("tag")?;
    let tag = EventTag::from_byte(tag_byte).ok_or(DecodeError::UnknownTag(tag_byte))?;
    let timestamp_ms = u64::from_be_bytes(r.array("timestamp")?);
    let payload = EventPayload::decode_body(tag, &mut r)?;
    r.finish()?;
    Ok((timestamp_ms, payload))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub sender: PeerAddress,
    pub timestamp_ms: u64,
    pub signature: Signature,
    pub payload: EventPayload,
}

impl Envelope {
    pub fn seal(keypair: &Keypair, payload: EventPayload, now_ms: u64) -> Self {
        let signature = keypair.sign(&canonical_bytes(now_ms, &payload));
        Envelope {
            sender: keypair.address(),
            timestamp_ms: now_ms,
            signature,
            payload,
        }
    }

    pub fn tag(&self) -> EventTag {
        self.payload.tag()
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical_bytes(self.timestamp_ms, &self.payload)
    }

    pub fn has_valid_signature(&self) -> bool {
        identity::verify(&self.sender, &self.signing_bytes(), &self.signature)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 64);
        out.push(self.tag() as u8);
        out.extend_from_slice(&self.timestamp_ms.to_be_bytes());
        out.extend_from_slice(self.sender.as_bytes());
        out.extend_from_slice(self.signature.as_bytes());
        self.payload.encode_body(&mut out);
        out
    }

    /// Strict decode: unknown tags, malformed bodies and trailing bytes are
    /// all errors. Embedded raw envelopes are kept as bytes and decoded by
    /// the handlers that need them.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tag_byte = r.u8("tag")?;
        let tag = EventTag::from_byte(tag_byte).ok_or(DecodeError::UnknownTag(tag_byte))?;
        let timestamp_ms = u64::from_be_bytes(r.array("timestamp")?);
        let sender = PeerAddress::from_bytes(r.array("sender")?);
        let signature = Signature::from_bytes(r.array("signature")?);
        let payload = EventPayload::decode_body(tag, &mut r)?;
        r.finish()?;
        Ok(Envelope {
            sender,
            timestamp_ms,
            signature,
            payload,
        })
    }
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    let len = u32::try_from(len).expect("length prefix exceeds u32");
    out.extend_from_slice(&len.to_be_bytes());
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    put_len(out, blob.len());
    out.extend_from_slice(blob);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DecodeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array(what)?))
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn blob(&mut self, what: &'static str) -> Result<&'a [u8], DecodeError> {
        let len = self.u32(what)? as usize;
        self.take(len, what)
    }

    fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn kp(n: u8) -> Keypair {
        Keypair::from_seed(&[n; 32])
    }

    fn addr(n: u8) -> PeerAddress {
        PeerAddress::from_bytes([n; 32])
    }

    #[test]
    fn keep_alive_order_is_preserved() {
        let ab = EventPayload::KeepAlive {
            target_peers: vec![addr(1), addr(2)],
        };
        let ba = EventPayload::KeepAlive {
            target_peers: vec![addr(2), addr(1)],
        };
        assert_eq!(canonical_bytes(5, &ab), canonical_bytes(5, &ab));
        assert_ne!(canonical_bytes(5, &ab), canonical_bytes(5, &ba));
        assert!(same_peer_set(
            ab.target_peers().unwrap(),
            ba.target_peers().unwrap()
        ));
    }

    #[test]
    fn bit_exact_layouts() {
        let init = EventPayload::ConnectionInit {
            target_peers: vec![addr(0xaa)],
        };
        let bytes = canonical_bytes(0x0102, &init);
        let mut expected = vec![0x01, 0, 0, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 1];
        expected.extend_from_slice(&[0xaa; 32]);
        assert_eq!(bytes, expected);

        let req = EventPayload::ConnectionRequirement {
            challenge: PowChallenge {
                nonce_bytes: vec![9, 8],
                difficulty: 3,
            },
        };
        assert_eq!(
            canonical_bytes(1, &req),
            vec![0x03, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 2, 9, 8, 0, 0, 0, 3]
        );

        let key = kp(1);
        let env = Envelope::seal(&key, init.clone(), 0x0102);
        let wire = env.to_bytes();
        assert_eq!(wire.len(), HEADER_LEN + 4 + 32);
        assert_eq!(wire[0], 0x01);
        assert_eq!(&wire[1..9], &0x0102u64.to_be_bytes());
        assert_eq!(&wire[9..41], key.address().as_bytes());
        assert_eq!(&wire[41..105], env.signature.as_bytes());
        assert_eq!(&wire[105..], &bytes[9..]);
    }

    #[test]
    fn response_layout() {
        let payload = EventPayload::ConnectionRequirementResponse {
            requirement_raw_payload: vec![0xee],
            proof: PowProof {
                solver_nonce: 258,
                digest: [0x11; 32],
            },
        };
        let bytes = canonical_bytes(0, &payload);
        assert_eq!(bytes[0], 0x04);
        assert_eq!(&bytes[9..14], &[0, 0, 0, 1, 0xee]);
        assert_eq!(&bytes[14..22], &258u64.to_be_bytes());
        assert_eq!(&bytes[22..], &[0x11; 32]);
    }

    #[test]
    fn decode_rejects_malformed_input() {
        let env = Envelope::seal(
            &kp(1),
            EventPayload::KeepAlive {
                target_peers: vec![addr(2)],
            },
            10,
        );
        let wire = env.to_bytes();
        assert_eq!(Envelope::from_bytes(&wire).unwrap(), env);

        let mut bad_tag = wire.clone();
        bad_tag[0] = 0x07;
        assert_eq!(
            Envelope::from_bytes(&bad_tag),
            Err(DecodeError::UnknownTag(7))
        );

        let mut trailing = wire.clone();
        trailing.push(0);
        assert_eq!(
            Envelope::from_bytes(&trailing),
            Err(DecodeError::TrailingBytes(1))
        );

        assert!(matches!(
            Envelope::from_bytes(&wire[..wire.len() - 1]),
            Err(DecodeError::Truncated(_))
        ));
        assert!(Envelope::from_bytes(&[]).is_err());

        let empty = Envelope::seal(
            &kp(1),
            EventPayload::KeepAlive {
                target_peers: vec![],
            },
            1,
        );
        assert_eq!(
            Envelope::from_bytes(&empty.to_bytes()),
            Err(DecodeError::EmptyTargets)
        );

        let dup = Envelope::seal(
            &kp(1),
            EventPayload::ConnectionInit {
                target_peers: vec![addr(3), addr(3)],
            },
            1,
        );
        assert_eq!(
            Envelope::from_bytes(&dup.to_bytes()),
            Err(DecodeError::DuplicateTarget)
        );

        // a huge advertised count must not allocate or panic
        let mut huge = wire[..HEADER_LEN].to_vec();
        huge.extend_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(
            Envelope::from_bytes(&huge),
            Err(DecodeError::Truncated(_))
        ));
    }

    #[test]
    fn sealed_envelope_verifies_and_sender_swap_fails() {
        let env = Envelope::seal(
            &kp(1),
            EventPayload::ConnectionInit {
                target_peers: vec![addr(9)],
            },
            77,
        );
        assert!(env.has_valid_signature());
        let mut forged = env.clone();
        forged.sender = kp(2).address();
        assert!(!forged.has_valid_signature());
        let mut retimed = env.clone();
        retimed.timestamp_ms += 1;
        assert!(!retimed.has_valid_signature());
    }

    fn arb_addr() -> impl Strategy<Value = PeerAddress> {
        any::<[u8; 32]>().prop_map(PeerAddress::from_bytes)
    }

    fn arb_targets() -> impl Strategy<Value = Vec<PeerAddress>> {
        prop::collection::btree_set(arb_addr(), 1..6).prop_map(|s| s.into_iter().collect())
    }

    fn arb_blob() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(any::<u8>(), 0..200)
    }

    fn arb_payload() -> impl Strategy<Value = EventPayload> {
        prop_oneof![
            arb_targets().prop_map(|target_peers| EventPayload::ConnectionInit { target_peers }),
            arb_targets().prop_map(|target_peers| EventPayload::KeepAlive { target_peers }),
            arb_blob().prop_map(|init_envelope| EventPayload::NewPeer { init_envelope }),
            arb_blob().prop_map(|evidence| EventPayload::AlreadyConnected { evidence }),
            (prop::collection::vec(any::<u8>(), 1..64), 0u32..=256).prop_map(|(n, d)| {
                EventPayload::ConnectionRequirement {
                    challenge: PowChallenge {
                        nonce_bytes: n,
                        difficulty: d,
                    },
                }
            }),
            (arb_blob(), any::<u64>(), any::<[u8; 32]>()).prop_map(|(raw, n, digest)| {
                EventPayload::ConnectionRequirementResponse {
                    requirement_raw_payload: raw,
                    proof: PowProof {
                        solver_nonce: n,
                        digest,
                    },
                }
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn canonical_round_trip(ts in any::<u64>(), payload in arb_payload()) {
            let bytes = canonical_bytes(ts, &payload);
            prop_assert_eq!(decode_canonical(&bytes).unwrap(), (ts, payload));
        }
    }

    proptest! {
        #[test]
        fn envelope_round_trip(ts in any::<u64>(), payload in arb_payload(), seed in any::<[u8; 32]>()) {
            let env = Envelope::seal(&Keypair::from_seed(&seed), payload, ts);
            let wire = env.to_bytes();
            let back = Envelope::from_bytes(&wire).unwrap();
            prop_assert!(back.has_valid_signature());
            prop_assert_eq!(back.to_bytes(), wire);
        }

        #[test]
        fn distinct_inputs_encode_distinctly(
            a in (any::<u64>(), arb_payload()),
            b in (any::<u64>(), arb_payload()),
        ) {
            prop_assume!(a != b);
            prop_assert_ne!(canonical_bytes(a.0, &a.1), canonical_bytes(b.0, &b.1));
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
            let _ = Envelope::from_bytes(&bytes);
        }
    }
}
