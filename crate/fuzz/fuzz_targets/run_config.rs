#![no_main]

use libfuzzer_sys::fuzz_target;
use ontolabel_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).expect("written config parses"), cfg);
    }
});
