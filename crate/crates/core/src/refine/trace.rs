//! Per-iteration refinement records and the entropy-gap proxy.
//!
//! Every row is evaluated at hard-rounded latents so curves are
//! comparable across methods and iterations: `rate_y` and `rate_z` are
//! coding bits of the current quantized latents, `posterior_nll` is the
//! Monte-Carlo posterior NLL of the quantized hyper latent given the
//! current `y` (logged for every method, optimized only where the
//! objective includes it), `total` is the plain rate-distortion
//! objective at those rounded latents.

use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "iter,rate_y_bits,rate_z_bits,posterior_nll_bits,distortion,total";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    pub posterior_nll_bits: f64,
    pub distortion: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    pub rows: Vec<TraceRow>,
    /// Objective recomputed with hard rounding and the real coded
    /// bitstream after the final iteration.
    pub final_validation_loss: f64,
}

impl RefineTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.rate_y_bits, r.rate_z_bits, r.posterior_nll_bits, r.distortion, r.total
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn from_csv(text: &str) -> Result<RefineTrace> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRACE_HEADER => {}
            other => {
                return Err(Error::Format(format!("bad trace header {:?}", other)));
            }
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Format(format!("trace line {}: {} fields", ln + 2, fields.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Format(format!("trace line {}: bad number {s}", ln + 2)))
            };
            rows.push(TraceRow {
                iter: fields[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("trace line {}: bad iter", ln + 2)))?,
                rate_y_bits: num(fields[1])?,
                rate_z_bits: num(fields[2])?,
                posterior_nll_bits: num(fields[3])?,
                distortion: num(fields[4])?,
                total: num(fields[5])?,
            });
        }
        Ok(RefineTrace { rows, final_validation_loss: f64::NAN })
    }

    pub fn read_csv(path: &Path) -> Result<RefineTrace> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Reference-subtracted entropy-gap proxy at iteration `m`:
/// `(rate_y + rate_z - posterior_nll)(m)` minus the same expression at
/// `m = 0`, so it is zero at initialization by construction. This stands
/// in for the extra rate of approximating the latent marginal by the
/// joint, whose true reference point is not observable.
pub fn delta_h(trace: &RefineTrace, m: usize) -> Result<f64> {
    let gap = |r: &TraceRow| r.rate_y_bits + r.rate_z_bits - r.posterior_nll_bits;
    let row = trace
        .rows
        .get(m)
        .ok_or(Error::TraceIndex { index: m, len: trace.rows.len() })?;
    let base = trace
        .rows
        .first()
        .ok_or(Error::TraceIndex { index: 0, len: 0 })?;
    Ok(gap(row) - gap(base))
}
