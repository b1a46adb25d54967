//! Schema parsing never panics; a parsed schema exposes at most one label
//! column.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(schema) = fui_core::data::parse_schema(text) {
        let _ = schema.label_column();
    }
});
