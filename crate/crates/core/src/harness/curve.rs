use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,eval_return_mean,eval_return_std,loss_critic,loss_mcritic,loss_meta";

/// One evaluation point. Losses are averages over the gradient steps since
/// the previous row and are NaN when no such step produced them.
#[derive(Clone, Debug)]
pub struct CurveRow {
    pub step: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub loss_critic: f64,
    pub loss_mcritic: f64,
    pub loss_meta: f64,
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

impl PartialEq for CurveRow {
    fn eq(&self, o: &Self) -> bool {
        self.step == o.step
            && same(self.eval_return_mean, o.eval_return_mean)
            && same(self.eval_return_std, o.eval_return_std)
            && same(self.loss_critic, o.loss_critic)
            && same(self.loss_mcritic, o.loss_mcritic)
            && same(self.loss_meta, o.loss_meta)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.eval_return_mean, r.eval_return_std, r.loss_critic, r.loss_mcritic, r.loss_meta
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => {
                return Err(Error::Parse(format!(
                    "unexpected CSV header {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Parse(format!("CSV row {}: expected 6 fields", i + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("CSV row {}: bad number `{s}`", i + 2)))
            };
            rows.push(CurveRow {
                step: f[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("CSV row {}: bad step", i + 2)))?,
                eval_return_mean: num(f[1])?,
                eval_return_std: num(f[2])?,
                loss_critic: num(f[3])?,
                loss_mcritic: num(f[4])?,
                loss_meta: num(f[5])?,
            });
        }
        let curve = Self { rows };
        if !curve.steps_increasing() {
            return Err(Error::Parse("CSV steps are not strictly increasing".into()));
        }
        Ok(curve)
    }

    pub fn steps_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].step < w[1].step)
    }

    pub fn steps(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.step).collect()
    }

    pub fn column(&self, f: impl Fn(&CurveRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }
}
