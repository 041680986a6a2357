use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};

/// Labeled sample: one input per row of `x`, labels in `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl LabeledData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// `n × (d+1)` layout with the label in the last column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let (n, d) = self.x.shape();
        let mut out = self.x.clone().resize(n, d + 1, 0.0);
        out.set_column(d, &self.y);
        out
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let d = m.ncols() - 1;
        Self {
            x: m.columns(0, d).into_owned(),
            y: m.column(d).into_owned(),
        }
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(order),
            y: DVector::from_iterator(order.len(), order.iter().map(|&i| self.y[i])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_layout_round_trip() {
        let data = LabeledData::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DVector::from_vec(vec![5.0, 6.0]),
        )
        .unwrap();
        let m = data.to_matrix();
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0, 6.0]);
        assert_eq!(LabeledData::from_matrix(&m), data);
    }
}
