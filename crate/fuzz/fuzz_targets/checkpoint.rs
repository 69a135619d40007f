#![no_main]

use libfuzzer_sys::fuzz_target;
use wganc::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ck) = Checkpoint::parse(text) {
        assert_eq!(Checkpoint::parse(&ck.to_text()).expect("written checkpoint must parse"), ck);
    }
});
