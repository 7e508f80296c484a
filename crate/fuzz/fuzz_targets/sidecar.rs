#![no_main]

use libfuzzer_sys::fuzz_target;
use spinshot_cli::sidecar::{dump_len, parse_sidecar};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(car) = parse_sidecar(text) {
        let _ = dump_len(&car);
    }
});
