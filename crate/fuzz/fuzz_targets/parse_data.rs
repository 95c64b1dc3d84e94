//! Fuzzes the data file loader against a fixed schema, covering row
//! validation, canonical sorting and key-uniqueness checking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shredql::datagen::org_schema;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = shredql::frontend::parse_data(text, &org_schema());
    }
});
