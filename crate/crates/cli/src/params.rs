//! Trained-parameter files.
//!
//! ```text
//! model cascade
//! iterations 5 5 5
//! betas 0.1 0.2
//! betas 0.1 0.2
//! betas 0.3 0.0
//! ```
//!
//! One `iterations` value and one `betas` line per group: a single group for
//! the unified model, one per scale (coarse first) for the cascade. Reals are
//! written in shortest round-trip form, so saving and loading is lossless.

use anyhow::{bail, Context, Result};
use crffuse_core::{CrfParams, ModelKind};

pub fn render_params(params: &CrfParams) -> String {
    let mut out = format!("model {}\n", params.kind().name());
    let iters: Vec<String> = params.iterations().iter().map(|t| t.to_string()).collect();
    out.push_str(&format!("iterations {}\n", iters.join(" ")));
    for group in params.groups() {
        let betas: Vec<String> = group.iter().map(|b| format!("{b:?}")).collect();
        out.push_str(&format!("betas {}\n", betas.join(" ")));
    }
    out
}

pub fn parse_params(text: &str) -> Result<CrfParams> {
    let mut kind = None;
    let mut iterations = None;
    let mut betas = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or_default();
        let rest: Vec<&str> = words.collect();
        let at = || format!("line {}", n + 1);
        match key {
            "model" => {
                if kind.is_some() || rest.len() != 1 {
                    bail!("{}: expected a single `model <unified|cascade>` line", at());
                }
                kind = Some(ModelKind::parse(rest[0]).with_context(|| format!("{}: unknown model {:?}", at(), rest[0]))?);
            }
            "iterations" => {
                if iterations.is_some() {
                    bail!("{}: duplicate iterations line", at());
                }
                let parsed = rest
                    .iter()
                    .map(|w| w.parse::<usize>().with_context(|| format!("{}: bad iteration count {w:?}", at())))
                    .collect::<Result<Vec<_>>>()?;
                iterations = Some(parsed);
            }
            "betas" => {
                let parsed = rest
                    .iter()
                    .map(|w| w.parse::<f64>().with_context(|| format!("{}: bad beta {w:?}", at())))
                    .collect::<Result<Vec<_>>>()?;
                betas.push(parsed);
            }
            other => bail!("{}: unknown key {other:?}", at()),
        }
    }
    let kind = kind.context("missing `model` line")?;
    let iterations = iterations.context("missing `iterations` line")?;
    Ok(CrfParams::new(kind, betas, iterations)?)
}
