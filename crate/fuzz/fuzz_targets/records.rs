#![no_main]

use libfuzzer_sys::fuzz_target;
use spinshot_cli::records::{emit_records, load_experiments, parse_records};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(recs) = parse_records(text) {
        // Anything that parses must survive emit and re-parse unchanged.
        let again = parse_records(&emit_records(&recs)).expect("emitted records parse");
        assert_eq!(recs, again);
    }
    let _ = load_experiments(text, "fuzz");
});
