//! Byte-exact layouts, checked against bytes assembled by hand.

use ed25519_dalek::{Signer, SigningKey};
use konnektor_core::identity::{Keypair, PeerAddress};
use konnektor_core::pow::{self, PowChallenge, PowProof};
use konnektor_core::wire::{canonical_bytes, Envelope, EventPayload, HEADER_LEN};
use sha2::{Digest, Sha256};

fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s.replace(' ', "")).unwrap()
}

#[test]
fn rfc8032_first_vector() {
    let seed: [u8; 32] = unhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
        .try_into()
        .unwrap();
    let k = Keypair::from_seed(&seed);
    assert_eq!(
        k.address().to_hex(),
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
    );
    let sig = k.sign(b"");
    assert_eq!(
        hex::encode(sig.as_bytes()),
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155\
         5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
    );
}

fn hand_envelope(seed: [u8; 32], tag: u8, ts: u64, body: &[u8]) -> Vec<u8> {
    let key = SigningKey::from_bytes(&seed);
    let mut signed = vec![tag];
    signed.extend_from_slice(&ts.to_be_bytes());
    signed.extend_from_slice(body);
    let sig = key.sign(&signed).to_bytes();
    let mut out = vec![tag];
    out.extend_from_slice(&ts.to_be_bytes());
    out.extend_from_slice(key.verifying_key().as_bytes());
    out.extend_from_slice(&sig);
    out.extend_from_slice(body);
    out
}

#[test]
fn keep_alive_layout() {
    let seed = [3u8; 32];
    let a = PeerAddress::from_bytes([0xaa; 32]);
    let b = PeerAddress::from_bytes([0xbb; 32]);
    let ts = 0x0102_0304_0506_0708;
    let env = Envelope::seal(
        &Keypair::from_seed(&seed),
        EventPayload::KeepAlive {
            target_peers: vec![a, b],
        },
        ts,
    );
    let mut body = vec![0, 0, 0, 2];
    body.extend_from_slice(&[0xaa; 32]);
    body.extend_from_slice(&[0xbb; 32]);
    let expected = hand_envelope(seed, 6, ts, &body);
    assert_eq!(env.to_bytes(), expected);
    assert_eq!(expected.len(), HEADER_LEN + body.len());
    assert_eq!(&expected[1..9], &[1, 2, 3, 4, 5, 6, 7, 8]);
    assert_eq!(Envelope::from_bytes(&expected).unwrap(), env);
}

#[test]
fn every_tag_layout() {
    let seed = [9u8; 32];
    let k = Keypair::from_seed(&seed);
    let ts: u64 = 1_700_000_000_123;
    let challenge = PowChallenge {
        nonce_bytes: vec![1, 2, 3],
        difficulty: 5,
    };
    let raw = vec![0xde, 0xad];
    let digest = [0x5a; 32];
    let cases: Vec<(EventPayload, u8, Vec<u8>)> = vec![
        (
            EventPayload::ConnectionInit {
                target_peers: vec![PeerAddress::from_bytes([1; 32])],
            },
            1,
            [vec![0, 0, 0, 1], vec![1; 32]].concat(),
        ),
        (
            EventPayload::NewPeer {
                init_envelope: raw.clone(),
            },
            2,
            vec![0, 0, 0, 2, 0xde, 0xad],
        ),
        (
            EventPayload::ConnectionRequirement {
                challenge: challenge.clone(),
            },
            3,
            vec![0, 0, 0, 3, 1, 2, 3, 0, 0, 0, 5],
        ),
        (
            EventPayload::ConnectionRequirementResponse {
                requirement_raw_payload: raw.clone(),
                proof: PowProof {
                    solver_nonce: 258,
                    digest,
                },
            },
            4,
            [
                vec![0, 0, 0, 2, 0xde, 0xad, 0, 0, 0, 0, 0, 0, 1, 2],
                digest.to_vec(),
            ]
            .concat(),
        ),
        (
            EventPayload::AlreadyConnected { evidence: raw },
            5,
            vec![0, 0, 0, 2, 0xde, 0xad],
        ),
    ];
    for (payload, tag, body) in cases {
        let signed = [vec![tag], ts.to_be_bytes().to_vec(), body.clone()].concat();
        assert_eq!(canonical_bytes(ts, &payload), signed, "{payload:?}");
        let env = Envelope::seal(&k, payload, ts);
        assert_eq!(env.to_bytes(), hand_envelope(seed, tag, ts, &body));
    }
}

#[test]
fn pow_digest_is_sha256_of_nonce_then_big_endian_counter() {
    let nonce = b"konnektor";
    for n in [0u64, 1, 255, 1 << 40] {
        let mut h = Sha256::new();
        h.update(nonce);
        h.update(n.to_be_bytes());
        let expected: [u8; 32] = h.finalize().into();
        assert_eq!(pow::digest_for(nonce, n), expected);
    }
}

#[test]
fn decode_rejects_every_strict_prefix() {
    let k = Keypair::from_seed(&[4; 32]);
    let env = Envelope::seal(
        &k,
        EventPayload::ConnectionInit {
            target_peers: vec![PeerAddress::from_bytes([2; 32])],
        },
        77,
    );
    let bytes = env.to_bytes();
    for cut in 0..bytes.len() {
        assert!(Envelope::from_bytes(&bytes[..cut]).is_err(), "prefix {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Envelope::from_bytes(&long).is_err());
    let mut bad_tag = bytes;
    bad_tag[0] = 7;
    assert!(Envelope::from_bytes(&bad_tag).is_err());
}
