//! Sparsemax: the Euclidean projection of a score vector onto the
//! probability simplex, and its exact Jacobian-vector product.
//!
//! With z sorted descending, the support size is the largest k with
//! 1 + k*z_(k) > sum_{j<=k} z_(j); the threshold is
//! tau = (sum_{j<=k} z_(j) - 1) / k and the output is max(0, z_i - tau).
//! Unlike softmax the result can put exactly zero mass on low scores.

use crate::error::{DasError, Result};

fn check_scores(z: &[f64], what: &str) -> Result<()> {
    if z.is_empty() {
        return Err(DasError::Argument(format!("{what} of an empty vector")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(DasError::Argument(format!("{what} of non-finite scores")));
    }
    Ok(())
}

/// Indices of `z` ordered by descending value; ties keep ascending index.
fn descending_order(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Support size and threshold tau for `z`.
pub fn threshold(z: &[f64]) -> Result<(usize, f64)> {
    check_scores(z, "sparsemax")?;
    let order = descending_order(z);
    let mut cum = 0.0;
    let mut k = 0usize;
    let mut cum_at_k = 0.0;
    for (r, &i) in order.iter().enumerate() {
        cum += z[i];
        let kk = r + 1;
        if 1.0 + kk as f64 * z[i] > cum {
            k = kk;
            cum_at_k = cum;
        }
    }
    Ok((k, (cum_at_k - 1.0) / k as f64))
}

/// Projection onto the simplex: max(0, z_i - tau).
pub fn sparsemax(z: &[f64]) -> Result<Vec<f64>> {
    let (_, tau) = threshold(z)?;
    Ok(z.iter().map(|&v| (v - tau).max(0.0)).collect())
}

/// Jacobian-vector product of sparsemax at `z` applied to `upstream`:
/// inside the support, upstream minus the support mean; zero outside.
/// Entries exactly at the threshold count as outside.
pub fn sparsemax_backward(z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != z.len() {
        return Err(DasError::Dimension(format!(
            "upstream length {} does not match input length {}",
            upstream.len(),
            z.len()
        )));
    }
    let out = sparsemax(z)?;
    let support: Vec<bool> = out.iter().map(|&v| v > 0.0).collect();
    let members = support.iter().filter(|&&s| s).count();
    let mean = if members > 0 {
        support
            .iter()
            .zip(upstream)
            .filter(|(&s, _)| s)
            .map(|(_, &g)| g)
            .sum::<f64>()
            / members as f64
    } else {
        0.0
    };
    Ok(support
        .iter()
        .zip(upstream)
        .map(|(&s, &g)| if s { g - mean } else { 0.0 })
        .collect())
}

/// Shift-stable softmax, the dense mixing alternative.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    check_scores(z, "softmax")?;
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let denom: f64 = out.iter().sum();
    for v in &mut out {
        *v /= denom;
    }
    Ok(out)
}

/// Jacobian-vector product of softmax at `z`.
pub fn softmax_backward(z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != z.len() {
        return Err(DasError::Dimension(format!(
            "upstream length {} does not match input length {}",
            upstream.len(),
            z.len()
        )));
    }
    let p = softmax(z)?;
    let dot: f64 = p.iter().zip(upstream).map(|(&pi, &gi)| pi * gi).sum();
    Ok(p.iter().zip(upstream).map(|(&pi, &gi)| pi * (gi - dot)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn uniform_scores_project_to_uniform() {
        close(&sparsemax(&[0.0, 0.0, 0.0]).unwrap(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn dominant_score_takes_all_mass() {
        // support 1, tau = 9
        close(&sparsemax(&[10.0, 0.0, 0.0]).unwrap(), &[1.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn simplex_point_is_fixed() {
        // support 3, tau = 0
        close(&sparsemax(&[0.5, 0.3, 0.2]).unwrap(), &[0.5, 0.3, 0.2], 1e-15);
        // dyadic entries sum to exactly 1.0, so the output is bitwise equal
        let z = [0.25, 0.25, 0.5];
        assert_eq!(sparsemax(&z).unwrap(), z.to_vec());
    }

    #[test]
    fn partial_support() {
        // support 2, tau = 0.05
        close(&sparsemax(&[1.0, 0.1]).unwrap(), &[0.95, 0.05], 1e-15);
    }

    #[test]
    fn backward_centers_upstream_on_full_support() {
        let g = sparsemax_backward(&[0.0, 0.0, 0.0], &[3.0, 0.0, 0.0]).unwrap();
        close(&g, &[2.0, -1.0, -1.0], 1e-15);
    }

    #[test]
    fn backward_is_zero_on_collapsed_support() {
        let g = sparsemax_backward(&[10.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        close(&g, &[0.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn softmax_matches_closed_form() {
        close(&softmax(&[0.0, 0.0]).unwrap(), &[0.5, 0.5], 1e-15);
        let z = [1f64.ln(), 2f64.ln(), 3f64.ln()];
        close(
            &softmax(&z).unwrap(),
            &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0],
            1e-12,
        );
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.0]).unwrap();
        let b = softmax(&[0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0]).unwrap();
        close(&a, &b, 1e-12);
    }

    #[test]
    fn empty_and_non_finite_scores_are_rejected() {
        assert!(sparsemax(&[]).is_err());
        assert!(sparsemax(&[f64::NAN, 1.0]).is_err());
        assert!(sparsemax(&[f64::INFINITY, 1.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn ties_split_mass_equally() {
        let p = sparsemax(&[1.0, 1.0, -5.0]).unwrap();
        close(&p, &[0.5, 0.5, 0.0], 1e-15);
    }
}
