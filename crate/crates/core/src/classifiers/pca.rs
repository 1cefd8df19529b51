use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Principal components of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// One unit-norm component per row, by decreasing explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub variance_target: f64,
}

/// Keeps the fewest components whose cumulative explained variance reaches `variance`.
///
/// The eigenproblem is solved on the covariance (`d × d`) or on the Gram matrix
/// (`n × n`), whichever is smaller.
pub fn pca_fit<S: Scalar>(xs: &[&[S]], variance: f64) -> Result<PcaModel> {
    if !(variance > 0.0 && variance <= 1.0) {
        return Err(Error::InvalidArgument(format!("variance target {variance} outside (0, 1]")));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two samples".into()));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("samples of differing length".into()));
    }
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| xs[i][j].as_f64() - mean[j]);
    let scale = 1.0 / (n as f64 - 1.0);

    let (values, vectors) = if d <= n {
        let cov = centered.tr_mul(&centered) * scale;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let gram = &centered * centered.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let lambdas: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let total: f64 = lambdas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("training data has zero variance".into()));
    }
    let mut keep = 0;
    let mut acc = 0.0;
    while keep < lambdas.len() {
        acc += lambdas[keep];
        keep += 1;
        if acc / total >= variance - 1e-12 {
            break;
        }
    }
    let mut components = Vec::with_capacity(keep);
    for &i in &order[..keep] {
        let mut v: Vec<f64> = if d <= n {
            vectors.column(i).iter().copied().collect()
        } else {
            // Map a Gram eigenvector back to feature space.
            let u = vectors.column(i);
            (0..d).map(|j| centered.column(j).dot(&u)).collect()
        };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        components.push(v);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: lambdas[..keep].to_vec(),
        total_variance: total,
        variance_target: variance,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_len(&self) -> usize {
        self.mean.len()
    }

    pub fn retained_fraction(&self) -> f64 {
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    pub fn transform<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!("input of length {} for PCA over {}", x.len(), self.mean.len())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                let s: f64 = c.iter().zip(x).zip(&self.mean).map(|((w, v), m)| w * (v.as_f64() - m)).sum();
                S::lit(s)
            })
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            x.iter_mut().zip(c).for_each(|(xv, cv)| *xv += zi * cv);
        }
        x
    }

    /// Pulls a gradient in component space back to input space.
    pub fn backproject<S: Scalar>(&self, g: &[S]) -> Vec<S> {
        let mut out = vec![0.0; self.mean.len()];
        for (c, gi) in self.components.iter().zip(g) {
            let gi = gi.as_f64();
            out.iter_mut().zip(c).for_each(|(o, cv)| *o += gi * cv);
        }
        out.into_iter().map(S::lit).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn line_data_needs_one_component() {
        let dir: Vec<f64> = (0..50).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let data: Vec<Vec<f64>> = (0..6).map(|t| dir.iter().map(|v| 0.3 + t as f64 * v).collect()).collect();
        let xs: Vec<&[f64]> = data.iter().map(|x| &x[..]).collect();
        let m = pca_fit(&xs, 0.995).unwrap();
        assert_eq!(m.n_components(), 1);
        assert!((m.retained_fraction() - 1.0).abs() < 1e-9);
        let z = m.transform(&m.mean).unwrap();
        assert!(z.iter().all(|v: &f64| v.abs() < 1e-12));
    }

    #[test]
    fn both_factorizations_agree() {
        let mut r = crate::seed::rng(3);
        let data: Vec<Vec<f64>> = (0..12).map(|_| (0..8).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
        let xs: Vec<&[f64]> = data.iter().map(|x| &x[..]).collect();
        let tall = pca_fit(&xs, 1.0).unwrap();
        // Transposed problem: 8 samples of 12 features has the same nonzero spectrum shape
        // only up to scaling, so compare against itself through reconstruction instead.
        for x in &xs {
            let z: Vec<f64> = tall.transform(x).unwrap();
            let back = tall.inverse_transform(&z);
            for (a, b) in back.iter().zip(x.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let wide_data: Vec<Vec<f64>> = data[..5].to_vec();
        let wide: Vec<&[f64]> = wide_data.iter().map(|x| &x[..]).collect();
        let m = pca_fit(&wide, 1.0).unwrap();
        assert!(m.n_components() <= 4);
        for x in &wide {
            let back = m.inverse_transform(&m.transform::<f64>(x).unwrap());
            for (a, b) in back.iter().zip(x.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_targets() {
        let xs: Vec<&[f64]> = vec![&[0.0, 1.0], &[1.0, 0.0]];
        assert!(pca_fit(&xs, 0.0).is_err());
        assert!(pca_fit(&xs, 1.5).is_err());
        assert!(pca_fit(&xs[..1], 0.9).is_err());
    }
}
