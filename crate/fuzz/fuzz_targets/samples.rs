#![no_main]

use libfuzzer_sys::fuzz_target;
use wganc::samples::{parse_samples, write_samples};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_samples(data) {
        assert!(t.data().iter().all(|v| v.is_finite()));
        assert_eq!(parse_samples(write_samples(&t).as_bytes()).expect("written samples must parse"), t);
    }
});
