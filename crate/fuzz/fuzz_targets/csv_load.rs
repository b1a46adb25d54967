//! CSV ingestion over arbitrary schema/csv/label-column triples never
//! panics; accepted datasets satisfy the dataset invariants.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (&str, &str, &str)| {
    let (schema_text, csv_text, label) = input;
    let Ok(schema) = fui_core::data::parse_schema(schema_text) else {
        return;
    };
    if let Ok(data) = fui_core::data::load_csv_str(csv_text, label, &schema) {
        assert!(!data.is_empty());
        assert!(data.input_dim() >= 1);
        for i in 0..data.len() {
            assert!(data.row(i).iter().all(|v| v.is_finite()));
        }
    }
});
