//! Dense matrix routines sized for DC estimation problems (a few hundred
//! rows at most). Rank decisions use a relative pivot threshold of
//! `PIVOT_REL_TOL` times the largest entry of the input matrix.

pub const PIVOT_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix with the listed rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Mat {
        let mut m = Mat::zeros(keep.len(), self.cols);
        for (i, &r) in keep.iter().enumerate() {
            m.row_mut(i).copy_from_slice(self.row(r));
        }
        m
    }

    /// Matrix with the listed columns, in the given order.
    pub fn select_cols(&self, keep: &[usize]) -> Mat {
        let mut m = Mat::zeros(self.rows, keep.len());
        for i in 0..self.rows {
            for (j, &c) in keep.iter().enumerate() {
                m[(i, j)] = self[(i, c)];
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut m = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(j, i)] = self[(i, j)];
            }
        }
        m
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut m = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    m[(i, j)] += a * other[(k, j)];
                }
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Rank via Gauss-Jordan elimination with partial pivoting.
    pub fn rank(&self) -> usize {
        let mut work = self.clone();
        let tol = PIVOT_REL_TOL * work.max_abs();
        if tol == 0.0 {
            return 0;
        }
        let mut rank = 0;
        for col in 0..work.cols {
            // partial pivot: largest |entry| in this column at or below `rank`
            let mut best = rank;
            for r in rank..work.rows {
                if work[(r, col)].abs() > work[(best, col)].abs() {
                    best = r;
                }
            }
            if rank >= work.rows || work[(best, col)].abs() <= tol {
                continue;
            }
            work.swap_rows(rank, best);
            let p = work[(rank, col)];
            for j in 0..work.cols {
                work[(rank, j)] /= p;
            }
            for r in 0..work.rows {
                if r != rank {
                    let f = work[(r, col)];
                    if f != 0.0 {
                        for j in 0..work.cols {
                            work[(r, j)] -= f * work[(rank, j)];
                        }
                    }
                }
            }
            rank += 1;
            if rank == work.rows {
                break;
            }
        }
        rank
    }

    /// Solve `self * x = b` for square nonsingular systems (Gauss-Jordan with
    /// partial pivoting). Returns None when a pivot falls below the relative
    /// threshold.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        assert_eq!(self.rows, self.cols, "solve needs a square matrix");
        assert_eq!(self.rows, b.len());
        let n = self.rows;
        let mut work = self.clone();
        let mut rhs = b.to_vec();
        let tol = PIVOT_REL_TOL * work.max_abs();
        for col in 0..n {
            let mut best = col;
            for r in col..n {
                if work[(r, col)].abs() > work[(best, col)].abs() {
                    best = r;
                }
            }
            if work[(best, col)].abs() <= tol {
                return None;
            }
            work.swap_rows(col, best);
            rhs.swap(col, best);
            let p = work[(col, col)];
            for j in 0..n {
                work[(col, j)] /= p;
            }
            rhs[col] /= p;
            for r in 0..n {
                if r != col {
                    let f = work[(r, col)];
                    if f != 0.0 {
                        for j in 0..n {
                            work[(r, j)] -= f * work[(col, j)];
                        }
                        rhs[r] -= f * rhs[col];
                    }
                }
            }
        }
        Some(rhs)
    }

    /// Basis of the null space, one vector per column. Each basis vector is
    /// scaled so that its largest entry in magnitude is 1.
    pub fn null_space(&self) -> Vec<Vec<f64>> {
        let mut work = self.clone();
        let n = self.cols;
        let tol = PIVOT_REL_TOL * work.max_abs().max(1e-300);
        let mut pivot_col_of_row = Vec::new();
        let mut row = 0;
        for col in 0..n {
            let mut best = row;
            for r in row..work.rows {
                if work[(r, col)].abs() > work[(best, col)].abs() {
                    best = r;
                }
            }
            if row >= work.rows || work[(best, col)].abs() <= tol {
                continue;
            }
            work.swap_rows(row, best);
            let p = work[(row, col)];
            for j in 0..n {
                work[(row, j)] /= p;
            }
            for r in 0..work.rows {
                if r != row {
                    let f = work[(r, col)];
                    if f != 0.0 {
                        for j in 0..n {
                            work[(r, j)] -= f * work[(row, j)];
                        }
                    }
                }
            }
            pivot_col_of_row.push(col);
            row += 1;
        }
        let pivot_cols: Vec<usize> = pivot_col_of_row.clone();
        let free_cols: Vec<usize> =
            (0..n).filter(|c| !pivot_cols.contains(c)).collect();
        let mut basis = Vec::new();
        for &fc in &free_cols {
            let mut v = vec![0.0; n];
            v[fc] = 1.0;
            for (r, &pc) in pivot_col_of_row.iter().enumerate() {
                v[pc] = -work[(r, fc)];
            }
            let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if scale > 0.0 {
                for x in &mut v {
                    *x /= scale;
                }
            }
            basis.push(v);
        }
        basis
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    /// Rows rendered as CSV with full float precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
