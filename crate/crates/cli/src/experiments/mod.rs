//! Experiment bodies, grouped by the core module they exercise.
//!
//! Streams: every experiment derives its randomness from
//! `RngStream::new(seed, 0)` through `split`, so a run is a pure function
//! of (config, seed).

pub mod chain;
pub mod gaussian;
pub mod refinement;
pub mod transport;

use acolab::diffusion::fmt_f64;

/// Builds a CSV document; float cells go through [`num`].
pub(crate) struct Csv {
    out: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut out = header.join(",");
        out.push('\n');
        Self { out }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.out.push_str(&cells.join(","));
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// 17 significant digits.
pub(crate) fn num(x: f64) -> String {
    fmt_f64(x)
}

/// Stable label for a parameter value in file and check names.
pub(crate) fn label(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["k", "x"]);
        c.row(&["0".into(), num(0.1)]);
        assert_eq!(c.finish(), "k,x\n0,1.0000000000000001e-1\n");
        assert_eq!(label(0.5), "0.5");
    }
}
