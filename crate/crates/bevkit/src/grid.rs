//! Dense row-major 2D grid used by the BEV channels, the normalization map
//! and the ground grid.

/// Row-major 2D array. Row index runs along decreasing x, column index along
/// decreasing y (see [`crate::bev::BevConfig`] for the anchoring rule).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid data length mismatch");
        Grid2 { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Quarter-turn rotation about the grid center (square grids only).
    /// The entry that was at `(i, j)` ends up at `(n-1-j, i)`, matching a
    /// +90 degree rotation of the underlying x-forward / y-left frame.
    pub fn rot90(&self) -> Grid2<T> {
        assert_eq!(self.rows, self.cols, "rot90 requires a square grid");
        let n = self.rows;
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                out.push(self.get(b, n - 1 - a));
            }
        }
        Grid2::from_vec(n, n, out)
    }

    /// Mirror across the forward axis: reverses every row.
    pub fn mirror_cols(&self) -> Grid2<T> {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            row.reverse();
        }
        out
    }
}
