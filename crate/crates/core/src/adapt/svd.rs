//! Thin SVD of a tall matrix given by its columns, by one-sided Jacobi rotations.

use crate::scalar::Scalar;

/// Left singular vectors (unit columns) and singular values, sorted by decreasing value.
/// Columns belonging to zero singular values are returned as zero vectors.
pub fn thin_svd<S: Scalar>(columns: &[Vec<S>]) -> (Vec<Vec<S>>, Vec<S>) {
    let mut cols: Vec<Vec<S>> = columns.to_vec();
    let n = cols.len();
    let eps = S::epsilon();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&cols[p], &cols[q]);
                    let mut al = S::zero();
                    let mut be = S::zero();
                    let mut ga = S::zero();
                    for (&x, &y) in a.iter().zip(b) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if gamma == S::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = (S::one() + t * t).sqrt().recip();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(S, Vec<S>)> = cols
        .into_iter()
        .map(|c| {
            let norm = c.iter().map(|&v| v * v).sum::<S>().sqrt();
            let u = if norm > S::zero() {
                c.iter().map(|&v| v / norm).collect()
            } else {
                vec![S::zero(); c.len()]
            };
            (norm, u)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let sigma = pairs.iter().map(|p| p.0).collect();
    (pairs.into_iter().map(|p| p.1).collect(), sigma)
}

/// Modified Gram–Schmidt, applied twice for orthonormality to working precision.
pub fn orthonormalize<S: Scalar>(vectors: &mut [Vec<S>]) {
    for _ in 0..2 {
        for k in 0..vectors.len() {
            let (done, rest) = vectors.split_at_mut(k);
            let v = &mut rest[0];
            for u in done.iter() {
                let dot: S = u.iter().zip(v.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|&x| x * x).sum::<S>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
}
