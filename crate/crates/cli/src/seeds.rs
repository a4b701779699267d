// SPDX-License-Identifier: Apache-2.0

//! Seed list syntax.

use anyhow::{bail, Context, Result};

/// Parses `7`, `1,4,9`, `1..20` or `1..=20`; ranges include both ends.
/// Items may be mixed: `1..3,10`.
pub fn parse(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        if let Some((lo, hi)) = item.split_once("..") {
            let hi = hi.strip_prefix('=').unwrap_or(hi);
            let lo: u64 = lo.trim().parse().with_context(|| format!("bad seed range {item:?}"))?;
            let hi: u64 = hi.trim().parse().with_context(|| format!("bad seed range {item:?}"))?;
            if lo > hi {
                bail!("empty seed range {item:?}");
            }
            out.extend(lo..=hi);
        } else {
            out.push(item.parse().with_context(|| format!("bad seed {item:?}"))?);
        }
    }
    if out.is_empty() {
        bail!("no seeds in {s:?}");
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
