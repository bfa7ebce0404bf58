#![no_main]

use libfuzzer_sys::fuzz_target;
use ontolabel::textmine::{mine_records, parse_sentences, tokenize_normalize};
use ontolabel::LabelOntology;

const ONTOLOGY: &str = "[labels]\nchest | body-part\nlung | body-part\nright lung | body-part\n\
right mid lung | body-part | right middle lobe\nright lower lobe | body-part\nnodule | type\nmass | type\n\
lymph node | type | adenopathy\nlarge | attribute\n[parents]\nlung -> chest\nright lung -> lung\n\
right mid lung -> right lung\nright lower lobe -> right lung\n";

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = tokenize_normalize(text);
    let Ok(records) = parse_sentences(text) else { return };
    let onto: LabelOntology = ONTOLOGY.parse().unwrap();
    let (rows, skipped) = mine_records(&records, &onto);
    assert!(skipped.len() <= records.len());
    assert!(rows.iter().all(|r| r.label < onto.len()));
});
