//! Plain-text parameter snapshots.
//!
//! ```text
//! # snapshot <step>
//! <name> <dim>,<dim>,... <v> <v> ...
//! ```
//!
//! One tensor per line; a scalar tensor has an empty shape written as `-`.
//! Values use Rust's shortest round-trip float formatting, so a parsed file
//! reproduces the written values exactly.

use std::fmt::Write as _;

use mc_autodiff::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Snapshot {
    pub fn new(step: u64, named: Vec<(String, &Tensor)>) -> Self {
        Self {
            step,
            tensors: named.into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    pub fn write_to(&self, out: &mut String) {
        let _ = writeln!(out, "# snapshot {}", self.step);
        for (name, t) in &self.tensors {
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = write!(out, "{name} {shape}");
            for v in t.data() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
}

pub fn format_snapshots(snaps: &[Snapshot]) -> String {
    let mut out = String::new();
    for s in snaps {
        s.write_to(&mut out);
    }
    out
}

pub fn parse_snapshots(text: &str) -> Result<Vec<Snapshot>> {
    let mut snaps: Vec<Snapshot> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |msg: &str| Error::Parse(format!("snapshot line {}: {msg}", lineno + 1));
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut words = rest.split_whitespace();
            if words.next() != Some("snapshot") {
                continue;
            }
            let step = words
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad("missing step"))?;
            snaps.push(Snapshot {
                step,
                tensors: Vec::new(),
            });
            continue;
        }
        let current = snaps
            .last_mut()
            .ok_or_else(|| bad("tensor before any snapshot header"))?;
        let mut words = line.split_whitespace();
        let name = words.next().ok_or_else(|| bad("missing name"))?.to_string();
        let shape_word = words.next().ok_or_else(|| bad("missing shape"))?;
        let shape: Vec<usize> = if shape_word == "-" {
            Vec::new()
        } else {
            shape_word
                .split(',')
                .map(|d| d.parse().map_err(|_| bad("bad shape")))
                .collect::<Result<_>>()?
        };
        let data: Vec<f64> = words
            .map(|w| w.parse().map_err(|_| bad("bad value")))
            .collect::<Result<_>>()?;
        let t = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
        current.tensors.push((name, t));
    }
    Ok(snaps)
}
