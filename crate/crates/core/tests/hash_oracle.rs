#[path = "support/reference_sha256.rs"]
mod reference;

use chaintable::{compute_hash, double_sha256, hash_preimage, Ledger, UpdateBatch, UpdateRecord};

const VECTORS: &str = include_str!("golden/double_sha256.txt");
const WORKED: &str = include_str!("golden/worked_example.txt");

fn rec(opid: u64, ts: &str, desc: &str) -> UpdateRecord {
    UpdateRecord::with_description(opid, ts, desc).unwrap()
}

#[test]
fn reference_sha256_matches_fips_vectors() {
    let hex = |b: [u8; 32]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
    assert_eq!(
        hex(reference::sha256(b"abc")),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    assert_eq!(
        hex(reference::sha256(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")),
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
    );
}

#[test]
fn golden_vectors_agree_with_both_implementations() {
    let vectors = reference::golden_vectors(VECTORS);
    assert_eq!(vectors.len(), 4);
    assert!(vectors[0].0.is_empty());
    for (pre, digest) in &vectors {
        assert_eq!(&reference::double_sha256_hex(pre), digest);
        assert_eq!(&double_sha256(pre).to_hex(), digest);
    }
}

#[test]
fn worked_example_preimages_and_hashes() {
    let vectors = reference::golden_vectors(VECTORS);
    let named = reference::golden_named(WORKED);

    let b1 = UpdateBatch::single(rec(1, "t1", "opt1"));
    let b2 = UpdateBatch::new(vec![rec(2, "t2", "opt2"), rec(3, "t3", "opt3")]).unwrap();
    let b3 = UpdateBatch::single(rec(1, "t4", "opt4"));

    let mut ledger = Ledger::new();
    for b in [&b1, &b2, &b3] {
        ledger.append_batch(b.clone()).unwrap();
    }
    let r = ledger.records();
    assert_eq!(r[0].hash.to_hex(), named["h1"]);
    assert_eq!(r[1].hash.to_hex(), named["h2"]);
    assert_eq!(r[2].hash.to_hex(), named["h3"]);

    assert_eq!(hash_preimage(1, &b1, None), vectors[1].0);
    assert_eq!(hash_preimage(2, &b2, Some(&r[0].hash)), vectors[2].0);
    assert_eq!(hash_preimage(3, &b3, Some(&r[1].hash)), vectors[3].0);

    let tampered2 = UpdateBatch::new(vec![rec(2, "t2", "opt5"), rec(3, "t3", "opt3")]).unwrap();
    let h2_star = compute_hash(2, &tampered2, Some(&r[0].hash));
    assert_eq!(h2_star.to_hex(), named["h2_opt5"]);
    assert_eq!(compute_hash(3, &b3, Some(&h2_star)).to_hex(), named["h3_after_h2_opt5"]);

    let tampered3 = UpdateBatch::single(rec(1, "t4", "opt6"));
    let h3_star = compute_hash(3, &tampered3, Some(&r[1].hash));
    assert_eq!(h3_star.to_hex(), named["h3_opt6"]);
    assert_ne!(h3_star, r[2].hash);
}
