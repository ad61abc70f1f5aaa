//! Units CSV, JSON output with fixed float precision.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::{Block, Design};
use crate::error::{Error, Result};

/// Significant digits kept for floats in structured output.
pub const SIG_DIGITS: usize = 12;

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn fmt_float(x: f64) -> String {
    if x.is_finite() { round_sig(x).to_string() } else { x.to_string() }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to [`SIG_DIGITS`] significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

/// One row of the units file `id,outcome,treatment,eligible,block`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRow {
    pub id: usize,
    pub outcome: Option<f64>,
    pub treatment: Option<u8>,
    pub eligible: u8,
    pub block: Option<usize>,
}

pub fn read_units<R: Read>(reader: R) -> Result<Vec<UnitRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["id", "outcome", "treatment", "eligible", "block"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::input(format!("units file header must be `{}`", expected.join(","))));
    }
    let mut rows: Vec<UnitRow> = Vec::new();
    for (k, rec) in rdr.deserialize().enumerate() {
        let row: UnitRow = rec.map_err(|e| Error::input(format!("units file row {}: {e}", k + 1)))?;
        if row.treatment.is_some_and(|t| t > 1) || row.eligible > 1 {
            return Err(Error::input(format!("units file row {}: treatment and eligible must be 0 or 1", k + 1)));
        }
        if row.treatment == Some(1) && row.eligible == 0 {
            return Err(Error::input(format!("unit {} is treated but not eligible", row.id)));
        }
        rows.push(row);
    }
    rows.sort_by_key(|r| r.id);
    for (k, r) in rows.iter().enumerate() {
        if r.id != k {
            return Err(Error::input(format!("unit ids must be 0..n-1 without gaps or repeats (problem at {})", r.id)));
        }
    }
    Ok(rows)
}

pub fn write_units<W: Write>(rows: &[UnitRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "outcome", "treatment", "eligible", "block"])?;
    for r in rows {
        out.write_record([
            r.id.to_string(),
            r.outcome.map(fmt_float).unwrap_or_default(),
            r.treatment.map(|t| t.to_string()).unwrap_or_default(),
            r.eligible.to_string(),
            r.block.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Design implied by a units file: blocks when any unit names one (each
/// block's treated count taken from the recorded treatments), otherwise
/// Bernoulli(`p`) on the eligible units.
pub fn design_from_units(rows: &[UnitRow], p: f64) -> Result<Design> {
    let n = rows.len();
    if rows.iter().any(|r| r.block.is_some()) {
        let mut blocks: std::collections::BTreeMap<usize, Block> = Default::default();
        for r in rows {
            match (r.block, r.eligible) {
                (Some(b), 1) => {
                    let blk = blocks.entry(b).or_insert(Block { units: Vec::new(), treated: 0 });
                    blk.units.push(r.id);
                    blk.treated += r.treatment.unwrap_or(0) as usize;
                }
                (Some(_), _) => return Err(Error::input(format!("unit {} has a block but is not eligible", r.id))),
                (None, 1) => return Err(Error::input(format!("eligible unit {} has no block", r.id))),
                _ => {}
            }
        }
        Design::blocks(n, blocks.into_values().collect())
    } else {
        let eligible: Vec<usize> = rows.iter().filter(|r| r.eligible == 1).map(|r| r.id).collect();
        Design::bernoulli(n, &eligible, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_float(2.0), "2");
        assert_eq!(round_sig(123456.7890123456), 123456.789012);
        let s = to_json(&serde_json::json!({"a": [0.1 + 0.2], "b": 4})).unwrap();
        assert!(s.contains("0.3") && !s.contains("0.30000000000000004"));
    }

    #[test]
    fn units_round_trip() {
        let rows = vec![
            UnitRow { id: 0, outcome: Some(1.5), treatment: Some(1), eligible: 1, block: None },
            UnitRow { id: 1, outcome: None, treatment: None, eligible: 0, block: None },
        ];
        let mut buf = Vec::new();
        write_units(&rows, &mut buf).unwrap();
        assert_eq!(read_units(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn bad_units_rejected() {
        assert!(read_units("id,outcome\n0,1\n".as_bytes()).is_err());
        assert!(read_units("id,outcome,treatment,eligible,block\n0,1,1,0,\n".as_bytes()).is_err());
        assert!(read_units("id,outcome,treatment,eligible,block\n1,1,0,0,\n".as_bytes()).is_err());
    }

    #[test]
    fn block_design_from_rows() {
        let text = "id,outcome,treatment,eligible,block\n0,1,1,1,0\n1,0,0,1,0\n2,0,,0,\n";
        let rows = read_units(text.as_bytes()).unwrap();
        let d = design_from_units(&rows, 0.5).unwrap();
        assert_eq!(d.marginal(0), 0.5);
        assert_eq!(d.marginal(2), 0.0);
    }
}
