use proptest::prelude::*;

use hetoc_core::text::{parse, print};

const SEEDS: &[&str] = &[
    include_str!("golden/sum.hir"),
    include_str!("golden/in_place.hir"),
    include_str!("golden/lowered.hir"),
    include_str!("golden/sha1_batch.hir"),
    include_str!("golden/nested.hir"),
];

/// Applies byte-level edits to a seed program.
fn mutate(seed: &str, edits: &[(usize, u8, u8)]) -> String {
    let mut bytes = seed.as_bytes().to_vec();
    for &(pos, op, byte) in edits {
        if bytes.is_empty() {
            bytes.push(byte);
            continue;
        }
        let p = pos % bytes.len();
        match op % 4 {
            0 => bytes[p] = byte,
            1 => {
                bytes.remove(p);
            }
            2 => bytes.insert(p, byte),
            _ => bytes.truncate(p),
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn arbitrary_text_never_panics(s in "\\PC{0,200}") {
        let _ = parse(&s);
    }

    #[test]
    fn token_soup_never_panics(s in "([%@a-z0-9_.:\"={}()<>\\[\\], \n-]|func|hyper.for|to|devices|ins|outs|buf|i64|yield|return){0,80}") {
        let _ = parse(&s);
    }

    #[test]
    fn mutated_programs_never_panic(k in 0usize..5, edits in prop::collection::vec((any::<usize>(), any::<u8>(), 0x20u8..0x7f), 1..6)) {
        let text = mutate(SEEDS[k], &edits);
        if let Ok(m) = parse(&text) {
            // Anything accepted must print and parse back to itself.
            let printed = print(&m);
            prop_assert_eq!(parse(&printed).unwrap(), m);
        }
    }
}
