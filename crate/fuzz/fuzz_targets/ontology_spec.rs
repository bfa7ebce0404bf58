#![no_main]

use libfuzzer_sys::fuzz_target;
use ontolabel::ontology::{parse_spec, validate, write_spec};
use ontolabel::LabelOntology;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = parse_spec(text) else { return };
    let report = validate(&spec);
    let _ = report.render(&spec);
    match LabelOntology::new(spec.clone()) {
        Ok(onto) => {
            assert!(report.is_ok());
            // Writing and re-reading keeps the structure.
            let again: LabelOntology = write_spec(&onto.to_spec()).parse().expect("written spec parses");
            assert_eq!(again.parent_edges(), onto.parent_edges());
            assert_eq!(again.exclusivity_closure(), onto.exclusivity_closure());
            for l in 0..onto.len() {
                let single = ontolabel::LabelSet::from_ids(onto.len(), [l]);
                let up = onto.expand(&single);
                assert_eq!(onto.expand(&up), up);
            }
        }
        Err(_) => assert!(!report.is_ok()),
    }
});
