//! Feeds arbitrary text to the sampling-scheme parsers. Parsing must
//! never panic, and anything that parses must survive a display/parse
//! round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

use lcdsym::eval::{parse_scheme_list, SchemeSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = text.parse::<SchemeSpec>() {
        let reparsed: SchemeSpec = spec.to_string().parse().unwrap();
        assert_eq!(spec, reparsed);
    }
    if let Ok(list) = parse_scheme_list(text) {
        let joined = list
            .iter()
            .map(SchemeSpec::to_string)
            .collect::<Vec<_>>()
            .join(",");
        assert_eq!(parse_scheme_list(&joined).unwrap(), list);
    }
});
