//! Two-sample Kolmogorov-Smirnov distance.

use crate::error::{Error, Result};

/// `sup_x |F_a(x) - F_b(x)|` for the empirical distribution functions, exact,
/// by a merged walk over both sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("both samples must be nonempty"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::input("samples contain NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0, 0.1], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[0.5]).unwrap(), 0.5);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn ties_across_samples() {
        // F_a jumps to 1 at 0, F_b to 1/2 at 0 and 1 at 1.
        assert_eq!(ks_distance(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
    }
}
