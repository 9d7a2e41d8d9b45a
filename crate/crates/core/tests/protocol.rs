mod common;

use std::time::Instant;

use common::{arb_message, key};

use ompbook_core::protocol::{compute_signature, decode, encode, ProtocolError};
use ompbook_core::{KernelMessage, MessageHeader, MsgType, WireFrames};
use proptest::prelude::*;
use serde_json::json;

// Reference digests computed with Python's hmac module.
#[test]
fn signature_vectors() {
    assert_eq!(
        compute_signature(b"secret", br#"{"msg_type":"kernel_info_request"}"#, b"{}", b"{}", b"{}"),
        "da987989801f25e9398e6a2aee42649d93bf7451e56a863c9f755263d32e6ef1"
    );
    assert_eq!(
        compute_signature(
            b"a0436f6c-1916-498b-8eb9-e81ab9368e84",
            br#"{"date":"2024-05-01T12:00:00.000Z","msg_id":"m1","msg_type":"execute_request","session":"s1","username":"u","version":"5.3"}"#,
            b"{}",
            b"{}",
            br#"{"code":"int main(void) { return 0; }","silent":false}"#,
        ),
        "34aed27c6c248f1877ef3291c12525c1c01031cfbce8d94d384f5f743a824ae7"
    );
    assert_eq!(
        compute_signature(
            "kéy".as_bytes(),
            br#"{"a":1}"#,
            br#"{"b":2}"#,
            br#"{"c":3}"#,
            "{\"text\":\"\u{2211} = 523776\"}".as_bytes(),
        ),
        "e1bd1b58df794a7c255dc555018b10ca1a7e485c8a027c1986a53ab72d3535c0"
    );
}

#[test]
fn signature_sits_after_the_delimiter() {
    let msg = KernelMessage::new(MessageHeader::new(MsgType::KernelInfoRequest, "s", "u"), json!({}));
    let frames = encode(&msg, b"secret").unwrap().frames;
    assert_eq!(frames[0], b"<IDS|MSG>");
    let expected = compute_signature(b"secret", &frames[2], &frames[3], &frames[4], &frames[5]);
    assert_eq!(frames[1], expected.into_bytes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip(msg in arb_message(), key in key()) {
        // an identity frame equal to the delimiter cannot be framed
        prop_assume!(msg.identities.iter().all(|i| i.as_slice() != b"<IDS|MSG>"));
        let frames = encode(&msg, &key).unwrap();
        prop_assert_eq!(decode(&frames, &key).unwrap(), msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tampering_breaks_the_signature(
        msg in arb_message(),
        key in prop::collection::vec(any::<u8>(), 1..48),
        part in 1usize..6,
        at in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        prop_assume!(msg.identities.iter().all(|i| i.as_slice() != b"<IDS|MSG>"));
        let mut frames = encode(&msg, &key).unwrap();
        let delim = msg.identities.len();
        let frame = &mut frames.frames[delim + part];
        let i = at.index(frame.len());
        frame[i] ^= flip;
        prop_assert_eq!(decode(&frames, &key), Err(ProtocolError::BadSignature));
    }
}

#[test]
fn thousand_round_trips_are_fast() {
    let msg = KernelMessage::new(
        MessageHeader::new(MsgType::ExecuteRequest, "session", "user"),
        json!({"code": "int main(void) { return 0; }\n".repeat(20), "silent": false}),
    );
    let start = Instant::now();
    for _ in 0..1000 {
        let frames: WireFrames = encode(&msg, b"secret").unwrap();
        decode(&frames, b"secret").unwrap();
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
}
