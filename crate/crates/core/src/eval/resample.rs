use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded;

/// Row indices that balance the two classes by drawing extra minority rows
/// with replacement: all original rows in order, then the draws.
pub fn oversample_indices(y: &[u8], seed: u64) -> Result<Vec<usize>> {
    let ones: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
    let zeros: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0).collect();
    if ones.len() + zeros.len() != y.len() {
        return Err(Error::invalid("labels must be 0 or 1".to_string()));
    }
    if ones.is_empty() || zeros.is_empty() {
        return Err(Error::invalid(
            "rebalancing needs both classes present".to_string(),
        ));
    }
    let (minor, gap) = if ones.len() < zeros.len() {
        (&ones, zeros.len() - ones.len())
    } else {
        (&zeros, ones.len() - zeros.len())
    };
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.extend((0..gap).map(|_| minor[rng.random_range(0..minor.len())]));
    Ok(idx)
}

/// Random oversampling of the minority class until the counts are equal.
pub fn rebalance(x: &Matrix, y: &[u8], seed: u64) -> Result<(Matrix, Vec<u8>)> {
    if x.rows() != y.len() {
        return Err(Error::shape(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    let idx = oversample_indices(y, seed)?;
    Ok((x.select_rows(&idx), idx.iter().map(|&i| y[i]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ones: usize, zeros: usize) -> Vec<u8> {
        let mut y = vec![1; ones];
        y.extend(vec![0; zeros]);
        y
    }

    #[test]
    fn imbalanced_becomes_equal() {
        let y = labels(87, 13);
        let x = Matrix::new(100, 1, (0..100).map(f64::from).collect()).unwrap();
        let (x2, y2) = rebalance(&x, &y, 4).unwrap();
        assert_eq!(y2.iter().filter(|&&l| l == 1).count(), 87);
        assert_eq!(y2.iter().filter(|&&l| l == 0).count(), 87);
        for r in 100..174 {
            assert!(x2.row(r)[0] >= 87.0);
        }
    }

    #[test]
    fn balanced_is_unchanged() {
        let y = labels(5, 5);
        assert_eq!(
            oversample_indices(&y, 1).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn seeded_and_single_class() {
        let y = labels(3, 20);
        assert_eq!(
            oversample_indices(&y, 9).unwrap(),
            oversample_indices(&y, 9).unwrap()
        );
        assert!(oversample_indices(&labels(4, 0), 1).is_err());
    }
}
