//! Config parsing never panics; accepted configs round-trip through their
//! serialized text.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = fui_core::config::parse_config(text) {
        let reparsed = fui_core::config::parse_config(&cfg.to_text()).expect("round trip");
        assert_eq!(cfg, reparsed);
    }
});
