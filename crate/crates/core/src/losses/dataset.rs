use crate::error::{Error, Result};
use crate::norms::Matrix;

/// Immutable labelled dataset: `n` feature rows `h_i ∈ R^d`, labels in
/// `0..k` (0-based internally; files use 1-based labels).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    k: usize,
    data_bound: f64,
}

impl Dataset {
    /// Validates that every class is populated and caches the data bound
    /// `B = max_i ‖h_i‖_1`.
    pub fn new(features: Matrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        let ds = Self::with_empty_classes(features, labels, k)?;
        let mut seen = vec![false; k];
        ds.labels.iter().for_each(|&y| seen[y] = true);
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("class {} has no datapoint", c + 1)));
        }
        Ok(ds)
    }

    /// Like [`Dataset::new`] but tolerates classes without datapoints.
    /// Only meant for tiny hand-built instances such as a lone point in a
    /// two-class problem.
    pub fn with_empty_classes(features: Matrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 classes, got {k}")));
        }
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::InvalidInput(format!(
                    "label {} of row {i} outside 1..={k}",
                    y + 1
                )));
            }
        }
        let data_bound = (0..features.rows())
            .map(|i| features.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if !(data_bound > 0.0) {
            return Err(Error::InvalidInput("all feature rows are zero".into()));
        }
        Ok(Dataset {
            features,
            labels,
            k,
            data_bound,
        })
    }

    /// n×d feature matrix `H`.
    #[inline]
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    /// `B = max_i ‖h_i‖_1`.
    #[inline]
    pub fn data_bound(&self) -> f64 {
        self.data_bound
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn check_classifier(&self, w: &Matrix) -> Result<()> {
        if w.shape() != (self.k, self.d()) {
            return Err(Error::DimensionMismatch(format!(
                "classifier is {}x{}, dataset needs {}x{}",
                w.rows(),
                w.cols(),
                self.k,
                self.d()
            )));
        }
        Ok(())
    }

    /// Logits `W h_i` for every datapoint, as an n×k matrix.
    pub fn logits(&self, w: &Matrix) -> Result<Matrix> {
        self.check_classifier(w)?;
        let mut out = Matrix::zeros(self.n(), self.k);
        for i in 0..self.n() {
            let h = self.point(i);
            let row = out.row_mut(i);
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = crate::norms::dot_slices(w.row(c), h);
            }
        }
        Ok(out)
    }

    /// Largest Euclidean norm of a feature row.
    pub fn max_l2_row_norm(&self) -> f64 {
        (0..self.n())
            .map(|i| crate::norms::scaled_l2(self.point(i)))
            .fold(0.0, f64::max)
    }
}
