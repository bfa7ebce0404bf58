#![no_main]

use libfuzzer_sys::fuzz_target;
use ontolabel::dataset::{parse_label_rows, write_label_rows};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_label_rows(text) {
        assert_eq!(parse_label_rows(&write_label_rows(&rows)).expect("written rows parse"), rows);
    }
});
