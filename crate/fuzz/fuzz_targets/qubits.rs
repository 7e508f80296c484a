#![no_main]

use libfuzzer_sys::fuzz_target;
use spinshot_cli::qubits::parse_qubits;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_qubits(text) {
        for r in rows {
            assert!(r.qubit.measure_time >= 0.0 && r.qubit.relax_time > 0.0);
        }
    }
});
