//! Borrowed row-major matrix view shared by the learners.

/// A borrowed `rows × cols` matrix in row-major order.
#[derive(Clone, Copy, Debug)]
pub struct MatrixView<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
}

impl<'a> MatrixView<'a> {
    /// `data.len()` must be a multiple of `cols` (`cols` may be 0 only for
    /// empty data).
    pub fn new(data: &'a [f64], cols: usize) -> Self {
        let rows = if cols == 0 {
            assert!(data.is_empty(), "zero columns with nonempty data");
            0
        } else {
            assert_eq!(data.len() % cols, 0, "data length not a multiple of cols");
            data.len() / cols
        };
        MatrixView { data, rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copy out a column.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_indexing() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = MatrixView::new(&data, 3);
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 3);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.get(0, 2), 3.0);
        assert_eq!(m.column(1), vec![2.0, 5.0]);
    }

    #[test]
    #[should_panic]
    fn ragged_data_panics() {
        let data = [1.0, 2.0, 3.0];
        MatrixView::new(&data, 2);
    }
}
