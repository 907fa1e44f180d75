//! Single-dash long-flag parser.
//!
//! The command surface uses single-dash long options (`-rname`, `-rsize`),
//! so commands stay copy-pasteable from operator notes; general-purpose
//! parsers want `--rname`, hence this small bespoke one. `-h` and `-v` win
//! over everything else on the line and are recognized before any
//! validation, so they can never have side effects.

use std::collections::BTreeMap;

/// One flag a command accepts.
#[derive(Debug, Clone, Copy)]
pub struct ArgSpec {
    /// Flag name without the dash.
    pub name: &'static str,
    /// Whether the flag consumes the following token.
    pub takes_value: bool,
    /// Placeholder shown in usage, e.g. `RESOURCE_NAME`.
    pub value_name: &'static str,
    pub help: &'static str,
}

/// Values and switches collected from a command line.
#[derive(Debug, Default)]
pub struct ParsedArgs {
    values: BTreeMap<&'static str, String>,
    switches: Vec<&'static str>,
}

impl ParsedArgs {
    pub fn value(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn has(&self, name: &str) -> bool {
        self.switches.contains(&name) || self.values.contains_key(name)
    }
}

/// Parse outcome: help and version short-circuit everything else.
#[derive(Debug)]
pub enum Parsed {
    Help,
    Version,
    Args(ParsedArgs),
}

/// Parse `args` against `spec`. Unknown flags, missing values and stray
/// positional tokens are usage errors.
pub fn parse(args: &[String], spec: &[ArgSpec]) -> Result<Parsed, String> {
    if args.iter().any(|a| a == "-h") {
        return Ok(Parsed::Help);
    }
    if args.iter().any(|a| a == "-v") {
        return Ok(Parsed::Version);
    }

    let mut parsed = ParsedArgs::default();
    let mut iter = args.iter();
    while let Some(token) = iter.next() {
        let Some(name) = token.strip_prefix('-') else {
            return Err(format!("unexpected argument `{token}`"));
        };
        let Some(flag) = spec.iter().find(|f| f.name == name) else {
            return Err(format!("unknown flag `-{name}`"));
        };
        if flag.takes_value {
            let Some(value) = iter.next() else {
                return Err(format!("flag `-{name}` requires a value"));
            };
            parsed.values.insert(flag.name, value.clone());
        } else if !parsed.switches.contains(&flag.name) {
            parsed.switches.push(flag.name);
        }
    }
    Ok(Parsed::Args(parsed))
}

/// Render a usage block: the syntax line followed by flag descriptions.
pub fn usage(command: &str, syntax: &str, spec: &[ArgSpec]) -> String {
    let mut out = format!("usage: {command} {syntax}\n\n");
    out.push_str("arguments:\n");
    out.push_str("  -h  show this message and exit\n");
    out.push_str("  -v  show the version and exit\n");
    for flag in spec {
        if flag.takes_value {
            out.push_str(&format!("  -{} {}  {}\n", flag.name, flag.value_name, flag.help));
        } else {
            out.push_str(&format!("  -{}  {}\n", flag.name, flag.help));
        }
    }
    out
}
