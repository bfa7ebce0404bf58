#![no_main]

use std::sync::Arc;

use libfuzzer_sys::fuzz_target;
use ontolabel::dataset::{parse_dataset, Dataset};
use ontolabel::LabelOntology;

const ONTOLOGY: &str = "[labels]\nchest | body-part\nlung | body-part\nabdomen | body-part\nnodule | type\n\
[parents]\nlung -> chest\n[exclusive]\nchest <-> abdomen\n";

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(records) = parse_dataset(text) else { return };
    let onto: Arc<LabelOntology> = Arc::new(ONTOLOGY.parse().unwrap());
    if let Ok(ds) = Dataset::from_records(onto.clone(), records) {
        let again = Dataset::from_records(onto, parse_dataset(&ds.to_text()).expect("written dataset parses"))
            .expect("written dataset loads");
        assert_eq!(again.to_text(), ds.to_text());
    }
});
