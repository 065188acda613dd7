//! Byte-level tokenizer: every UTF-8 string in any language maps to ids
//! without a trained vocabulary.

pub const PAD: u32 = 0;
pub const SENTINEL: u32 = 1;
pub const END: u32 = 2;
/// Byte `b` has id `b + BYTE_OFFSET`.
pub const BYTE_OFFSET: u32 = 3;
pub const VOCAB_SIZE: usize = 256 + BYTE_OFFSET as usize;

/// `[SENTINEL] + bytes (truncated to max_length - 2) + [END]`.
pub fn tokenize(text: &str, max_length: usize) -> Vec<u32> {
    let budget = max_length.saturating_sub(2);
    let mut ids = Vec::with_capacity(budget.min(text.len()) + 2);
    ids.push(SENTINEL);
    ids.extend(text.bytes().take(budget).map(|b| b as u32 + BYTE_OFFSET));
    ids.push(END);
    ids
}

/// Raw bytes carried by a token sequence; specials are dropped.
pub fn detokenize(ids: &[u32]) -> Vec<u8> {
    ids.iter()
        .filter(|&&i| (BYTE_OFFSET..BYTE_OFFSET + 256).contains(&i))
        .map(|&i| (i - BYTE_OFFSET) as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(tokenize("", 64), vec![SENTINEL, END]);
        assert_eq!(tokenize("a", 64), vec![SENTINEL, b'a' as u32 + BYTE_OFFSET, END]);
        assert_eq!(tokenize("abcdef", 5).len(), 5);
    }

    #[test]
    fn all_supported_languages_round_trip() {
        for s in [
            "many planes are parked at the airport",
            "viele Flugzeuge stehen am Flughafen",
            "de nombreux avions sont garés à l'aéroport",
            "muchos aviones están estacionados",
            "许多飞机停在机场",
            "muitos aviões estão estacionados",
            "molti aerei sono parcheggiati",
            "много самолетов припарковано",
            "많은 비행기가 공항에 주차되어 있다",
            "veel vliegtuigen staan geparkeerd",
        ] {
            let ids = tokenize(s, 256);
            assert!(ids.iter().all(|&i| (i as usize) < VOCAB_SIZE));
            assert_eq!(String::from_utf8(detokenize(&ids)).unwrap(), s);
        }
    }

    proptest! {
        #[test]
        fn bytes_round_trip_below_limit(s in "\\PC{0,40}") {
            let ids = tokenize(&s, 200);
            prop_assume!(s.len() <= 198);
            prop_assert_eq!(detokenize(&ids), s.as_bytes().to_vec());
            prop_assert_eq!(ids.len(), s.len() + 2);
        }
    }
}
