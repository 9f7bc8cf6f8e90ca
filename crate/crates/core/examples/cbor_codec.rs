//! CBOR encoding, the JSON bridge and base64url segments.
//!
//! `cargo run --example cbor_codec`

use capodaz::codec::{base64url_decode, base64url_encode, cbor_to_json, decode_cbor, encode_cbor, json_to_cbor, CborError, CborValue};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() {
    let doc = CborValue::Map(vec![
        (CborValue::text("grant_type"), CborValue::text("client_credentials")),
        (CborValue::text("client_id"), CborValue::text("CAPODAZ-client")),
        (CborValue::text("expires_in"), CborValue::Unsigned(3600)),
        (CborValue::text("kid"), CborValue::Bytes(vec![0x11])),
    ]);
    let bytes = encode_cbor(&doc).unwrap();
    println!("{} bytes: {}", bytes.len(), hex(&bytes));
    assert_eq!(decode_cbor(&bytes).unwrap(), doc);

    // integers always take the narrowest head
    for n in [23u64, 24, 255, 256, 65_536] {
        println!("{n:>6} -> {}", hex(&encode_cbor(&CborValue::Unsigned(n)).unwrap()));
    }
    println!("    -1 -> {}", hex(&encode_cbor(&CborValue::Negative(0)).unwrap()));

    assert_eq!(decode_cbor(&bytes[..bytes.len() - 1]), Err(CborError::TruncatedInput));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_cbor(&trailing), Err(CborError::TrailingBytes(_))));

    let json = cbor_to_json(&doc).unwrap();
    println!("as JSON: {json}");
    let back = json_to_cbor(&serde_json::json!({"scope": ["read", "trust"], "exp": 1518074605})).unwrap();
    println!("from JSON: {back:?}");

    let segment = base64url_encode(&bytes);
    println!("base64url: {segment}");
    assert_eq!(base64url_decode(&segment).unwrap(), bytes);
}
