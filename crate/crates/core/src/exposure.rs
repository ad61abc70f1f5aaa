//! K-neighborhood exposure mappings.
//!
//! Exposure values are small integers indexing the mapping's finite
//! support: `0/1` for the binary mappings and the bin index for the binned
//! fraction mapping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Links;

pub type ExposureValue = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExposureSpec {
    /// `T_i = d_i`.
    OwnTreatment,
    /// `T_i = 1{ any neighbor treated }`.
    AnyTreatedNeighbor,
    /// Bin of the treated share of neighbors. `edges` are increasing bin
    /// boundaries; bin `k` is `[edges[k], edges[k+1])`, the last bin is
    /// closed, and isolated units fall in bin 0.
    FractionTreatedBinned { edges: Vec<f64> },
}

impl ExposureSpec {
    pub fn fraction_binned(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::input("fraction bins need at least two edges"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input("fraction bin edges must be strictly increasing"));
        }
        Ok(ExposureSpec::FractionTreatedBinned { edges })
    }

    /// Neighborhood radius K the mapping depends on.
    pub fn radius(&self) -> usize {
        match self {
            ExposureSpec::OwnTreatment => 0,
            ExposureSpec::AnyTreatedNeighbor | ExposureSpec::FractionTreatedBinned { .. } => 1,
        }
    }

    /// Number of exposure values; the support is `0..support_size()`.
    pub fn support_size(&self) -> u32 {
        match self {
            ExposureSpec::OwnTreatment | ExposureSpec::AnyTreatedNeighbor => 2,
            ExposureSpec::FractionTreatedBinned { edges } => (edges.len() - 1) as u32,
        }
    }

    pub fn in_support(&self, t: ExposureValue) -> bool {
        t < self.support_size()
    }

    /// Exposure of unit `i` under assignment `d`.
    #[inline]
    pub fn exposure_of(&self, i: usize, d: &[u8], links: Links<'_>) -> ExposureValue {
        match self {
            ExposureSpec::OwnTreatment => d[i] as u32,
            ExposureSpec::AnyTreatedNeighbor => links.of(i).iter().any(|&j| d[j] == 1) as u32,
            ExposureSpec::FractionTreatedBinned { edges } => {
                let nb = links.of(i);
                if nb.is_empty() {
                    return 0;
                }
                let treated = nb.iter().filter(|&&j| d[j] == 1).count();
                bin_of(edges, treated as f64 / nb.len() as f64)
            }
        }
    }

    pub fn compute(&self, d: &[u8], links: Links<'_>) -> Vec<ExposureValue> {
        (0..links.n()).map(|i| self.exposure_of(i, d, links)).collect()
    }
}

fn bin_of(edges: &[f64], f: f64) -> u32 {
    let bins = edges.len() - 1;
    // number of interior edges <= f
    let k = edges[1..bins].iter().take_while(|&&e| e <= f).count();
    k as u32
}

impl fmt::Display for ExposureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExposureSpec::OwnTreatment => write!(f, "own"),
            ExposureSpec::AnyTreatedNeighbor => write!(f, "any-nbr"),
            ExposureSpec::FractionTreatedBinned { edges } => {
                let parts: Vec<String> = edges.iter().map(|e| e.to_string()).collect();
                write!(f, "frac-nbr:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for ExposureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "own" => Ok(ExposureSpec::OwnTreatment),
            "any-nbr" => Ok(ExposureSpec::AnyTreatedNeighbor),
            other => {
                let Some(rest) = other.strip_prefix("frac-nbr:") else {
                    return Err(Error::input(format!("unknown exposure `{other}` (expected own, any-nbr, frac-nbr:<edges>)")));
                };
                let edges = rest
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| Error::input(format!("bad bin edge `{v}`"))))
                    .collect::<Result<Vec<_>>>()?;
                ExposureSpec::fraction_binned(edges)
            }
        }
    }
}

impl TryFrom<String> for ExposureSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ExposureSpec> for String {
    fn from(e: ExposureSpec) -> String {
        e.to_string()
    }
}
