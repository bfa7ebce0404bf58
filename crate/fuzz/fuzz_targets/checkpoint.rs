#![no_main]

use libfuzzer_sys::fuzz_target;
use ontolabel::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = Checkpoint::from_text(text) {
        let written = ckpt.to_text();
        assert_eq!(Checkpoint::from_text(&written).expect("written checkpoint parses").to_text(), written);
    }
});
