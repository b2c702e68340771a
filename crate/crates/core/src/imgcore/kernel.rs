use crate::error::{Error, Result};

/// Tolerance on `Σ weights = 1` for a feasible blur kernel.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Square odd-sided grid of real filter taps with no sign or sum constraint.
///
/// Gabor filters and intermediate kernel iterates use this type directly;
/// [`BlurKernel`] adds the point-spread-function constraints on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter2d {
    side: usize,
    weights: Vec<f64>,
}

impl Filter2d {
    pub fn new(side: usize, weights: Vec<f64>) -> Result<Self> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::dim(format!("filter side must be odd and >= 1, got {side}")));
        }
        if weights.len() != side * side {
            return Err(Error::dim(format!(
                "filter of side {side} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Degenerate("non-finite filter weight".into()));
        }
        Ok(Self { side, weights })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Offset of the center tap from the top-left corner.
    pub fn radius(&self) -> usize {
        self.side / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.weights[row * self.side + col]
    }

    /// The filter rotated by 180 degrees (flipped on both axes).
    pub fn flipped(&self) -> Filter2d {
        Filter2d {
            side: self.side,
            weights: self.weights.iter().rev().copied().collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

impl AsRef<Filter2d> for Filter2d {
    fn as_ref(&self) -> &Filter2d {
        self
    }
}

/// Nonnegative point-spread function whose weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel(Filter2d);

impl BlurKernel {
    /// Wraps weights that already satisfy the simplex constraints.
    pub fn new(side: usize, weights: Vec<f64>) -> Result<Self> {
        let filter = Filter2d::new(side, weights)?;
        if let Some(w) = filter.weights.iter().find(|&&w| w < 0.0) {
            return Err(Error::config(format!("kernel weight {w} is negative")));
        }
        let sum = filter.sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::config(format!("kernel weights sum to {sum}, expected 1")));
        }
        Ok(Self(filter))
    }

    /// Projects arbitrary weights onto the feasible set (clamp, renormalize).
    /// Falls back to the centered delta when nothing positive survives.
    pub fn from_projected(side: usize, weights: &[f64]) -> Result<Self> {
        if side == 0 || side % 2 == 0 || weights.len() != side * side {
            return Err(Error::dim(format!("cannot project {} weights onto a kernel of side {side}", weights.len())));
        }
        Ok(Self(Filter2d {
            side,
            weights: project_simplex(weights),
        }))
    }

    /// Kernel with a single unit tap at the center.
    pub fn delta(side: usize) -> Result<Self> {
        let mut w = vec![0.0; side * side];
        if side % 2 == 1 {
            w[side * side / 2] = 1.0;
        }
        Self::new(side, w)
    }

    pub fn identity() -> Self {
        Self(Filter2d { side: 1, weights: vec![1.0] })
    }

    pub fn side(&self) -> usize {
        self.0.side
    }

    pub fn weights(&self) -> &[f64] {
        &self.0.weights
    }

    pub fn center_weight(&self) -> f64 {
        self.0.weights[self.0.weights.len() / 2]
    }

    pub fn filter(&self) -> &Filter2d {
        &self.0
    }

    pub fn into_filter(self) -> Filter2d {
        self.0
    }
}

impl AsRef<Filter2d> for BlurKernel {
    fn as_ref(&self) -> &Filter2d {
        &self.0
    }
}

/// Clamps negative entries to zero and rescales to unit sum.
///
/// If nothing positive remains the centered delta of the same length is
/// returned (for non-square lengths the middle element is used).
pub fn project_simplex(weights: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = weights.iter().map(|&w| if w > 0.0 { w } else { 0.0 }).collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        out.iter_mut().for_each(|w| *w /= sum);
    } else {
        out.iter_mut().for_each(|w| *w = 0.0);
        if !out.is_empty() {
            let mid = out.len() / 2;
            out[mid] = 1.0;
        }
    }
    out
}
