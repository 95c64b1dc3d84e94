//! Fuzzes the whole front half: parse, elaborate, typecheck, normalize,
//! annotate and shred whatever query text survives the parser. Everything
//! downstream of the parser must handle accepted input without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shredql::datagen::org_schema;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Keep pathological inputs small enough that symbolic evaluation's
    // fuel bound is the only long pole.
    if text.len() > 4096 {
        return;
    }
    let schema = org_schema();
    let _ = shredql::pipeline::prepare(text, &schema);
});
