//! Random-input robustness for every parser entry point, mirroring the
//! fuzz targets in `fuzz/fuzz_targets/` so plain `cargo test` exercises the
//! same properties: no panics on garbage, and accepted inputs satisfy their
//! invariants.

use fui_core::config::parse_config;
use fui_core::data::{load_csv_str, parse_schema};
use fui_core::vecnum::codec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decode_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(v) = codec::decode(&bytes) {
            prop_assert!(v.dim() >= 1);
            prop_assert!(v.is_finite());
            prop_assert_eq!(codec::encode(&v), bytes);
        }
    }

    #[test]
    fn decode_mutated_valid_frames(values in prop::collection::vec(-1e300f64..1e300, 1..32), flip in any::<(u8, u8)>()) {
        let v = fui_core::vecnum::ParamVector::from_vec(values).unwrap();
        let mut bytes = codec::encode(&v);
        prop_assert_eq!(codec::decode(&bytes).unwrap(), v);
        // One flipped byte either still decodes to a finite vector of the
        // same length or errors; it never panics.
        let idx = flip.0 as usize % bytes.len();
        bytes[idx] ^= flip.1 | 1;
        if let Ok(mutated) = codec::decode(&bytes) {
            prop_assert!(mutated.is_finite());
        }
    }

    #[test]
    fn parse_arbitrary_config_text(text in "\\PC*") {
        if let Ok(cfg) = parse_config(&text) {
            let reparsed = parse_config(&cfg.to_text()).unwrap();
            prop_assert_eq!(cfg, reparsed);
        }
    }

    #[test]
    fn parse_config_like_lines(
        lines in prop::collection::vec("[a-z_]{1,14} ?= ?[-a-z0-9.e]{0,10}", 0..12)
    ) {
        let _ = parse_config(&lines.join("\n"));
    }

    #[test]
    fn parse_arbitrary_schema_text(text in "\\PC*") {
        if let Ok(schema) = parse_schema(&text) {
            let _ = schema.label_column();
        }
    }

    #[test]
    fn load_arbitrary_csv(
        schema_text in "[a-z]{1,6} = (numeric|categorical|label)(\n[a-z]{1,6} = (numeric|categorical|label)){0,4}",
        csv_text in "\\PC*",
        label in "[a-z]{1,6}"
    ) {
        if let Ok(schema) = parse_schema(&schema_text) {
            if let Ok(data) = load_csv_str(&csv_text, &label, &schema) {
                prop_assert!(!data.is_empty());
                prop_assert!(data.input_dim() >= 1);
            }
        }
    }
}
