//! Plain-text checkpoint format.
//!
//! ```text
//! buyback-checkpoint 1
//! contract fixed-shares
//! hidden 50
//! trade_inputs 4
//! stop_inputs 3
//! step 1000
//! tensor trade.w1 50 4
//! <one row per line, 17 significant digits>
//! ...
//! tensor nu 1 1
//! 1.0000000000000000e1
//! end
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::params::ParamStore;
use crate::contracts::ContractKind;

const MAGIC: &str = "buyback-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters plus the metadata stored alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub step: u64,
}

impl Checkpoint {
    pub fn new(params: ParamStore, step: u64) -> Self {
        Self { params, step }
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "contract {}", p.kind.as_str());
        let _ = writeln!(out, "hidden {}", p.hidden());
        let _ = writeln!(out, "trade_inputs {}", p.trade.input_dim());
        let _ = writeln!(out, "stop_inputs {}", p.stop.input_dim());
        let _ = writeln!(out, "step {}", self.step);
        for (name, t) in p.named_tensors() {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            for i in 0..t.rows() {
                let row: Vec<String> = (0..t.cols()).map(|j| format!("{:.16e}", t.get(i, j))).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str), CheckpointError> {
            lines.next().ok_or_else(|| CheckpointError::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };

        let (ln, head) = next("header")?;
        let version = head
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| perr(ln, "not a buyback checkpoint"))?;
        if version != VERSION {
            return Err(perr(ln, format!("unsupported version {version}")));
        }
        let (ln, l) = next("contract")?;
        let kind = field(ln, l, "contract")?
            .parse::<ContractKind>()
            .map_err(|e| perr(ln, e))?;
        let hidden = parse_usize(next("hidden")?, "hidden")?;
        let trade_inputs = parse_usize(next("trade_inputs")?, "trade_inputs")?;
        let stop_inputs = parse_usize(next("stop_inputs")?, "stop_inputs")?;
        let (ln, l) = next("step")?;
        let step = field(ln, l, "step")?
            .parse::<u64>()
            .map_err(|e| perr(ln, e.to_string()))?;

        if trade_inputs != kind.trade_inputs() || stop_inputs != kind.stop_inputs() {
            return Err(perr(
                ln,
                format!(
                    "input dims {trade_inputs}/{stop_inputs} do not match contract {}",
                    kind.as_str()
                ),
            ));
        }

        let mut params = ParamStore::naive(kind, hidden);
        let expected = params.named_tensors();
        let mut flat = Vec::with_capacity(params.len());
        for (name, shape) in expected.iter().map(|(n, t)| (*n, t.shape())) {
            let (ln, l) = next("tensor header")?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
                return Err(perr(ln, format!("expected `tensor {name} ...`, got `{l}`")));
            }
            let rows: usize = parts[2].parse().map_err(|_| perr(ln, "bad row count"))?;
            let cols: usize = parts[3].parse().map_err(|_| perr(ln, "bad column count"))?;
            if (rows, cols) != shape {
                return Err(perr(
                    ln,
                    format!("{name} has shape {rows}x{cols}, expected {}x{}", shape.0, shape.1),
                ));
            }
            for _ in 0..rows {
                let (ln, l) = next("tensor row")?;
                let row: Vec<f64> = l
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| perr(ln, format!("bad number: {e}")))?;
                if row.len() != cols {
                    return Err(perr(ln, format!("row has {} values, expected {cols}", row.len())));
                }
                flat.extend(row);
            }
        }
        let (ln, l) = next("end")?;
        if l != "end" {
            return Err(perr(ln, "missing `end` marker"));
        }
        params
            .assign_flat(&flat)
            .map_err(|e| perr(ln, e.to_string()))?;
        Ok(Self { params, step })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn perr(line: usize, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Parse {
        line,
        msg: msg.into(),
    }
}

fn field<'a>(ln: usize, line: &'a str, key: &str) -> Result<&'a str, CheckpointError> {
    line.strip_prefix(key)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| perr(ln, format!("expected `{key} <value>`")))
}

fn parse_usize((ln, line): (usize, &str), key: &str) -> Result<usize, CheckpointError> {
    field(ln, line, key)?
        .parse()
        .map_err(|_| perr(ln, format!("`{key}` must be a non-negative integer")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_is_bit_identical() {
        let p = ParamStore::init(ContractKind::FixedNotional, 50, 10.0, 1.0, 99);
        let ck = Checkpoint::new(p, 1234);
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back.step, 1234);
        let a = ck.params.flatten();
        let b = back.params.flatten();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn header_mismatch_is_reported() {
        let p = ParamStore::naive(ContractKind::FixedShares, 3);
        let text = Checkpoint::new(p, 0).to_text().replace("trade_inputs 4", "trade_inputs 5");
        let err = Checkpoint::from_text(&text).unwrap_err();
        assert!(err.to_string().contains("do not match"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let p = ParamStore::naive(ContractKind::ProfitSharing, 3);
        let text = Checkpoint::new(p, 0).to_text();
        let cut = &text[..text.len() / 2];
        assert!(Checkpoint::from_text(cut).is_err());
        assert!(Checkpoint::from_text("hello").is_err());
    }

    proptest! {
        #[test]
        fn any_finite_values_roundtrip(values in prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 29)) {
            // hidden = 2, fixed shares: 2*4+2+2+1 + 2*3+2+2+1 + 1 = 25
            let mut p = ParamStore::naive(ContractKind::FixedShares, 2);
            let n = p.len();
            let mut flat = values[..n].to_vec();
            flat[n - 1] = flat[n - 1].abs().max(1.0);
            p.assign_flat(&flat).unwrap();
            let back = Checkpoint::from_text(&Checkpoint::new(p.clone(), 3).to_text()).unwrap();
            for (x, y) in p.flatten().iter().zip(back.params.flatten()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
