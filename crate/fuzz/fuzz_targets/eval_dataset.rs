#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| chatbi_core::fuzzing::eval_dataset(data));
