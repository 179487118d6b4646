//! Seed list syntax: comma-separated items, each a single seed, a half-open
//! range `a..b` or an inclusive range `a..=b`. Duplicates are kept.

use anyhow::{bail, Context, Result};

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..=") {
            let (a, b) = (parse(a)?, parse(b)?);
            if b < a {
                bail!("empty seed range `{item}`");
            }
            seeds.extend(a..=b);
        } else if let Some((a, b)) = item.split_once("..") {
            let (a, b) = (parse(a)?, parse(b)?);
            if b <= a {
                bail!("empty seed range `{item}`");
            }
            seeds.extend(a..b);
        } else {
            seeds.push(parse(item)?);
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn parse(s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .with_context(|| format!("invalid seed `{s}`"))
}
