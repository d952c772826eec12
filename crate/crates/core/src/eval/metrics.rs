use serde::{Deserialize, Serialize};

use crate::data::REMEMBERED;
use crate::error::{Error, Result};

/// 2×2 counts. Row 0 is truly remembered, row 1 truly forgotten; column 0
/// is predicted remembered, column 1 predicted forgotten.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn tp(&self) -> u64 {
        self.counts[0][0]
    }

    pub fn fn_(&self) -> u64 {
        self.counts[0][1]
    }

    pub fn fp(&self) -> u64 {
        self.counts[1][0]
    }

    pub fn tn(&self) -> u64 {
        self.counts[1][1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for r in 0..2 {
            for c in 0..2 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn scaled(&self, k: u64) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: self.counts.map(|row| row.map(|v| v * k)),
        }
    }
}

fn slot(label: u8) -> usize {
    if label == REMEMBERED {
        0
    } else {
        1
    }
}

pub fn confusion(truth: &[u8], pred: &[u8]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no labels to compare".to_string()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(pred) {
        if t > 1 || p > 1 {
            return Err(Error::invalid(format!(
                "labels must be 0 or 1, got ({t}, {p})"
            )));
        }
        cm.counts[slot(t)][slot(p)] += 1;
    }
    Ok(cm)
}

fn nonempty(cm: &ConfusionMatrix) -> Result<u64> {
    match cm.total() {
        0 => Err(Error::invalid("confusion matrix is empty".to_string())),
        n => Ok(n),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(cm.trace() as f64 / nonempty(cm)? as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub rows: [[f64; 2]; 2],
    /// Rows with no true examples, emitted as zeros.
    pub empty_rows: [bool; 2],
}

pub fn normalize_rows(cm: &ConfusionMatrix) -> Result<NormalizedMatrix> {
    nonempty(cm)?;
    let mut out = NormalizedMatrix {
        rows: [[0.0; 2]; 2],
        empty_rows: [false; 2],
    };
    for r in 0..2 {
        let s = cm.counts[r][0] + cm.counts[r][1];
        if s == 0 {
            out.empty_rows[r] = true;
        } else {
            out.rows[r] = [
                cm.counts[r][0] as f64 / s as f64,
                cm.counts[r][1] as f64 / s as f64,
            ];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1, so κ is undefined and reported as 0.
    pub degenerate: bool,
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`. Computed as the exact integer
/// ratio `(N·trace - Σ rowₖ·colₖ) / (N² - Σ rowₖ·colₖ)` with one final
/// rounding, so scaled matrices give identical results.
pub fn kappa(cm: &ConfusionMatrix) -> Result<Kappa> {
    let n = nonempty(cm)? as i128;
    let c = cm.counts.map(|r| r.map(|v| v as i128));
    let chance: i128 = (0..2)
        .map(|k| (c[k][0] + c[k][1]) * (c[0][k] + c[1][k]))
        .sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(Kappa {
            value: 0.0,
            degenerate: true,
        });
    }
    let num = n * (c[0][0] + c[1][1]) - chance;
    Ok(Kappa {
        value: num as f64 / denom as f64,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(c: [[u64; 2]; 2]) -> ConfusionMatrix {
        ConfusionMatrix::new(c)
    }

    #[test]
    fn confusion_tallies() {
        assert_eq!(
            confusion(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap(),
            cm([[1, 1], [0, 2]])
        );
        let perfect = confusion(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((perfect.fn_(), perfect.fp()), (0, 0));
        let wrong = confusion(&[1, 0, 1], &[0, 1, 0]).unwrap();
        assert_eq!((wrong.tp(), wrong.tn()), (0, 0));
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_and_rows() {
        assert_eq!(accuracy(&cm([[5, 0], [0, 5]])).unwrap(), 1.0);
        assert_eq!(accuracy(&cm([[1, 1], [1, 1]])).unwrap(), 0.5);
        assert_eq!(
            normalize_rows(&cm([[1, 1], [1, 1]])).unwrap().rows,
            [[0.5, 0.5]; 2]
        );
        assert!((accuracy(&cm([[45, 5], [10, 40]])).unwrap() - 0.85).abs() < 1e-15);
        let n = normalize_rows(&cm([[3, 0], [0, 0]])).unwrap();
        assert_eq!(n.empty_rows, [false, true]);
        assert_eq!(n.rows[1], [0.0, 0.0]);
        assert!(accuracy(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn kappa_reference_values() {
        assert_eq!(kappa(&cm([[40, 10], [5, 45]])).unwrap().value, 0.7);
        assert_eq!(kappa(&cm([[30, 0], [0, 20]])).unwrap().value, 1.0);
        assert_eq!(kappa(&cm([[25, 25], [25, 25]])).unwrap().value, 0.0);
        let d = kappa(&cm([[7, 0], [0, 0]])).unwrap();
        assert_eq!(
            d,
            Kappa {
                value: 0.0,
                degenerate: true
            }
        );
        let all_one_pred = kappa(&cm([[5, 0], [3, 0]])).unwrap();
        assert_eq!(all_one_pred.value, 0.0);
        assert!(kappa(&ConfusionMatrix::default()).is_err());
    }

    proptest! {
        #[test]
        fn kappa_scale_invariant(a in 0u64..200, b in 0u64..200, c in 0u64..200, d in 0u64..200, k in 1u64..50) {
            let m = cm([[a, b], [c, d]]);
            prop_assume!(m.total() > 0);
            prop_assert_eq!(kappa(&m).unwrap(), kappa(&m.scaled(k)).unwrap());
        }

        #[test]
        fn kappa_one_iff_diagonal(a in 0u64..100, b in 0u64..100, c in 0u64..100, d in 0u64..100) {
            let m = cm([[a, b], [c, d]]);
            let k = kappa(&m);
            prop_assume!(m.total() > 0);
            let k = k.unwrap();
            if !k.degenerate {
                prop_assert_eq!(k.value == 1.0, b == 0 && c == 0);
                prop_assert!((-1.0..=1.0).contains(&k.value));
            }
        }

        #[test]
        fn kappa_zero_when_rows_match(r0 in 1u64..30, r1 in 1u64..30, p in 0u64..5, q in 0u64..5) {
            // Both rows proportional to (p, q): prediction independent of truth.
            prop_assume!(p + q > 0);
            let m = cm([[r0 * p, r0 * q], [r1 * p, r1 * q]]);
            prop_assert_eq!(kappa(&m).unwrap().value, 0.0);
        }
    }
}
