//! Decoding untrusted FUI1 bytes never panics; accepted inputs are finite
//! and re-encode to the identical bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = fui_core::vecnum::codec::decode(data) {
        assert!(v.dim() >= 1);
        assert!(v.is_finite());
        assert_eq!(fui_core::vecnum::codec::encode(&v), data);
    }
});
