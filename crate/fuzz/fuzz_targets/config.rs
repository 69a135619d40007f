#![no_main]

use libfuzzer_sys::fuzz_target;
use wganc::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::from_toml(text) {
        let text = config.to_toml();
        let again = RunConfig::from_toml(&text).expect("serialised config must parse");
        assert_eq!(again.to_toml(), text);
    }
});
