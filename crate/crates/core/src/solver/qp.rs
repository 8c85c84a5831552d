//! Dual active-set solver for strictly convex inequality-constrained QPs
//! (Goldfarb and Idnani).
//!
//! ```text
//!     min  0.5 x'Gx + c'x    s.t.  A x <= b
//! ```
//!
//! The factorization invariant is `J' N = [R; 0]`, where `J = L^{-T}` for
//! `G = L L'` and the columns of `N` are the active constraint normals.
//! Constraints are added and dropped with Givens rotations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `A`; zero for inactive rows.
    pub lambda: DVector<f64>,
    /// Active rows in the order they entered.
    pub active: Vec<usize>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

struct Factor {
    n: usize,
    q: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    // Returns (c, s, h) with [c s; -s c] [a; b] = [h; 0].
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

impl Factor {
    fn new(j: DMatrix<f64>) -> Self {
        let n = j.nrows();
        Self {
            n,
            q: 0,
            j,
            r: DMatrix::zeros(n, n),
        }
    }

    fn rotate_j_cols(&mut self, p: usize, q: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let a = self.j[(row, p)];
            let b = self.j[(row, q)];
            self.j[(row, p)] = c * a + s * b;
            self.j[(row, q)] = -s * a + c * b;
        }
    }

    /// Append a normal whose transformed vector is `d = J' n`.
    /// Returns false when `n` is linearly dependent on the active set.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        for k in (self.q + 1..self.n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if s == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j_cols(k - 1, k, c, s);
        }
        let scale = d.amax().max(1.0);
        if d[self.q].abs() <= f64::EPSILON * scale {
            return false;
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
        true
    }

    /// Remove the active constraint in position `l`.
    fn drop(&mut self, l: usize) {
        for col in l..self.q - 1 {
            for row in 0..self.n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.n {
            self.r[(row, self.q - 1)] = 0.0;
        }
        self.q -= 1;
        // Columns l.. are upper Hessenberg now; restore triangular form.
        for k in l..self.q {
            let (c, s, h) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            if s == 0.0 {
                continue;
            }
            self.r[(k, k)] = h;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..self.q {
                let a = self.r[(k, col)];
                let b = self.r[(k + 1, col)];
                self.r[(k, col)] = c * a + s * b;
                self.r[(k + 1, col)] = -s * a + c * b;
            }
            self.rotate_j_cols(k, k + 1, c, s);
        }
    }

    /// Primal step `z = J2 J2' n` and dual step `r = R^{-1} J1' n`.
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut z = DVector::zeros(self.n);
        for k in self.q..self.n {
            if d[k] != 0.0 {
                z.axpy(d[k], &self.j.column(k), 1.0);
            }
        }
        let mut r = DVector::zeros(self.q);
        for i in (0..self.q).rev() {
            let mut acc = d[i];
            for k in i + 1..self.q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        (z, r)
    }
}

/// Solve `min 0.5 x'Gx + c'x` subject to `A x <= b`.
pub fn solve_qp(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = g.nrows();
    let m = a.nrows();
    if g.ncols() != n || c.len() != n {
        return Err(QpError::Dimension("G must be n x n and c of length n".into()));
    }
    if m > 0 && a.ncols() != n || b.len() != m {
        return Err(QpError::Dimension("A must be m x n and b of length m".into()));
    }
    let chol = nalgebra::Cholesky::new(g.clone()).ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut f = Factor::new(linv.transpose());

    // Unconstrained minimizer x = -G^{-1} c.
    let mut x = -chol.solve(c);
    let mut obj = 0.5 * c.dot(&x);

    // GI works with n_i' x >= b_i; here n_i = -a_i and b_i -> -b_i.
    let normal = |i: usize| -> DVector<f64> { -a.row(i).transpose() };
    let row_norm: Vec<f64> = (0..m).map(|i| a.row(i).norm().max(1.0)).collect();

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; m];
    let max_iter = 50 * (n + m).max(1);
    let mut iterations = 0;

    let slack = |x: &DVector<f64>, i: usize| -> f64 { b[i] - a.row(i).dot(&x.transpose()) };

    loop {
        // Pick the most violated constraint, measured relative to its row norm.
        let mut p = None;
        let mut worst = 0.0;
        for i in 0..m {
            if in_active[i] {
                continue;
            }
            let s = slack(&x, i);
            let tol = 1e-12 * (1.0 + b[i].abs() + row_norm[i] * x.amax());
            if s < -tol && s / row_norm[i] < worst {
                worst = s / row_norm[i];
                p = Some(i);
            }
        }
        let Some(p) = p else {
            break;
        };
        let np = normal(p);
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(x, &active, &u, m, obj, QpStatus::MaxIter, iterations));
            }
            let d = f.j.transpose() * &np;
            let (z, r) = f.directions(&d);
            // Partial step: largest dual step keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let sp = slack(&x, p);
            // Full step: makes constraint p binding.
            let z_is_zero = zn <= 1e-14 * np.norm_squared().max(1.0);
            let t2 = if z_is_zero { f64::INFINITY } else { (-sp / zn).max(0.0) };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(finish(x, &active, &u, m, obj, QpStatus::Infeasible, iterations));
            }
            for (k, &rk) in r.iter().enumerate() {
                u[k] -= t * rk;
            }
            up += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
                obj += t * zn * (0.5 * t + up - t);
            }
            if t2 <= t1 {
                if f.add(d) {
                    active.push(p);
                    u.push(up);
                    in_active[p] = true;
                    break;
                }
                // Dependent normal with a finite full step cannot happen
                // (z != 0 implies independence); treat as numerical failure.
                return Ok(finish(x, &active, &u, m, obj, QpStatus::Infeasible, iterations));
            }
            let l = drop_at.expect("finite partial step has an index");
            in_active[active[l]] = false;
            active.remove(l);
            u.remove(l);
            f.drop(l);
        }
    }
    Ok(finish(x, &active, &u, m, obj, QpStatus::Solved, iterations))
}

fn finish(
    x: DVector<f64>,
    active: &[usize],
    u: &[f64],
    m: usize,
    objective: f64,
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let mut lambda = DVector::zeros(m);
    for (&i, &ui) in active.iter().zip(u) {
        lambda[i] = ui.max(0.0);
    }
    QpSolution {
        x,
        lambda,
        active: active.to_vec(),
        objective,
        status,
        iterations,
    }
}
