use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub name: String,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Band {
    pub fn new(name: &str, f_lo: f64, f_hi: f64) -> Self {
        Band {
            name: name.to_string(),
            f_lo,
            f_hi,
        }
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.f_lo + self.f_hi)
    }
}

/// Ordered, non-overlapping frequency bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Band>", into = "Vec<Band>")]
pub struct BandSet {
    bands: Vec<Band>,
}

impl BandSet {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("band set is empty"));
        }
        for (i, b) in bands.iter().enumerate() {
            if !(b.f_lo >= 0.0 && b.f_lo < b.f_hi && b.f_hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "band '{}' needs 0 <= f_lo < f_hi, got {}..{}",
                    b.name, b.f_lo, b.f_hi
                )));
            }
            if i > 0 && bands[i - 1].f_hi > b.f_lo {
                return Err(Error::invalid(format!(
                    "band '{}' overlaps or precedes '{}'",
                    b.name,
                    bands[i - 1].name
                )));
            }
            if bands[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::invalid(format!("duplicate band name '{}'", b.name)));
            }
        }
        Ok(BandSet { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }
}

impl Default for BandSet {
    /// delta, theta, alpha, spindle, beta, gamma.
    fn default() -> Self {
        BandSet {
            bands: vec![
                Band::new("delta", 0.5, 4.0),
                Band::new("theta", 4.0, 7.0),
                Band::new("alpha", 7.0, 12.0),
                Band::new("spindle", 12.0, 15.0),
                Band::new("beta", 15.0, 30.0),
                Band::new("gamma", 30.0, 50.0),
            ],
        }
    }
}

impl TryFrom<Vec<Band>> for BandSet {
    type Error = Error;

    fn try_from(v: Vec<Band>) -> Result<Self> {
        BandSet::new(v)
    }
}

impl From<BandSet> for Vec<Band> {
    fn from(b: BandSet) -> Self {
        b.bands
    }
}
