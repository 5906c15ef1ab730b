//! Multiply-accumulate accounting.
//!
//! Every op that performs products (matmul, convolutions, correlation)
//! reports its exact MAC count under an op-kind label. Counts land in the
//! running total and in every currently open scope, so a scope's report is
//! the sum of everything executed while it was open, nested scopes included.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Result, TensorError};

pub mod kind {
    pub const MATMUL: &str = "matmul";
    pub const CONV2D: &str = "conv2d";
    pub const CONV_TRANSPOSE2D: &str = "conv_transpose2d";
    pub const XCORR: &str = "xcorr";
    /// Query-key score products inside attention.
    pub const ATTN_QK: &str = "attn_qk";
    /// Attention-weighted value sums.
    pub const ATTN_AV: &str = "attn_av";
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopReport {
    macs: BTreeMap<String, u64>,
}

impl FlopReport {
    pub fn add(&mut self, kind: &str, macs: u64) {
        *self.macs.entry(kind.to_string()).or_insert(0) += macs;
    }

    pub fn merge(&mut self, other: &FlopReport) {
        for (k, &v) in &other.macs {
            self.add(k, v);
        }
    }

    pub fn get(&self, kind: &str) -> u64 {
        self.macs.get(kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.macs.values().sum()
    }

    /// MACs spent inside attention score and aggregation products.
    pub fn attention(&self) -> u64 {
        self.get(kind::ATTN_QK) + self.get(kind::ATTN_AV)
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.macs.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.macs {
            writeln!(f, "{k:>18}: {v}")?;
        }
        write!(f, "{:>18}: {}", "total", self.total())
    }
}

#[derive(Debug, Clone)]
pub struct FlopCounter {
    enabled: bool,
    total: FlopReport,
    scopes: Vec<(String, FlopReport)>,
}

impl Default for FlopCounter {
    fn default() -> Self {
        FlopCounter { enabled: true, total: FlopReport::default(), scopes: Vec::new() }
    }
}

impl FlopCounter {
    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(&mut self, kind: &str, macs: u64) {
        if !self.enabled {
            return;
        }
        self.total.add(kind, macs);
        for (_, r) in &mut self.scopes {
            r.add(kind, macs);
        }
    }

    pub fn begin(&mut self, name: &str) {
        self.scopes.push((name.to_string(), FlopReport::default()));
    }

    /// Closes the innermost scope, which must be `name`.
    pub fn end(&mut self, name: &str) -> Result<FlopReport> {
        match self.scopes.last() {
            Some((top, _)) if top == name => Ok(self.scopes.pop().expect("non-empty").1),
            Some((top, _)) => Err(TensorError::ScopeMismatch { expected: top.clone(), found: name.to_string() }),
            None => Err(TensorError::ScopeMismatch { expected: "<none>".into(), found: name.to_string() }),
        }
    }

    pub fn open_scopes(&self) -> usize {
        self.scopes.len()
    }

    pub fn total(&self) -> &FlopReport {
        &self.total
    }

    pub fn reset(&mut self) {
        self.total = FlopReport::default();
        self.scopes.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scope_reports_nothing() {
        let mut c = FlopCounter::default();
        c.begin("s");
        let r = c.end("s").unwrap();
        assert!(r.is_empty());
        assert_eq!(r.total(), 0);
    }

    #[test]
    fn nested_scopes_must_close_lifo() {
        let mut c = FlopCounter::default();
        c.begin("outer");
        c.begin("inner");
        c.record(kind::MATMUL, 5);
        assert!(matches!(c.end("outer"), Err(TensorError::ScopeMismatch { .. })));
        assert_eq!(c.end("inner").unwrap().total(), 5);
        c.record(kind::CONV2D, 7);
        let outer = c.end("outer").unwrap();
        assert_eq!(outer.get(kind::MATMUL), 5);
        assert_eq!(outer.total(), 12);
        assert!(c.end("outer").is_err());
    }

    #[test]
    fn disabled_counter_records_nothing() {
        let mut c = FlopCounter::default();
        c.set_enabled(false);
        c.record(kind::MATMUL, 10);
        assert_eq!(c.total().total(), 0);
    }
}
