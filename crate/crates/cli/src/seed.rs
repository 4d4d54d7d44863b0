//! Seed precedence: `--seed` flag, then a `--set run.seed=` override, then
//! the config file, then `SPIKEGRAD_SEED`, then the built-in default.

use crate::Failure;

pub const ENV_VAR: &str = "SPIKEGRAD_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seed {
    pub value: u64,
    pub source: &'static str,
}

fn parse(raw: &str, source: &'static str) -> Result<Seed, Failure> {
    raw.trim()
        .parse()
        .map(|value| Seed { value, source })
        .map_err(|_| Failure::usage(format!("seed from {source} is not an unsigned integer: '{raw}'")))
}

pub fn resolve(flag: Option<u64>, overridden: Option<&str>, config: Option<&str>) -> Result<Seed, Failure> {
    resolve_with_default(flag, overridden, config, 0)
}

pub fn resolve_with_default(
    flag: Option<u64>,
    overridden: Option<&str>,
    config: Option<&str>,
    default: u64,
) -> Result<Seed, Failure> {
    if let Some(value) = flag {
        return Ok(Seed { value, source: "--seed" });
    }
    if let Some(raw) = overridden {
        return parse(raw, "--set run.seed");
    }
    if let Some(raw) = config {
        return parse(raw, "config");
    }
    match std::env::var(ENV_VAR) {
        Ok(raw) => parse(&raw, ENV_VAR),
        Err(_) => Ok(Seed {
            value: default,
            source: "default",
        }),
    }
}
