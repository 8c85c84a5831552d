//! Randomized strictly convex QPs with a planted active set, posed as
//! one-stage control problems, and a brute-force binding-set oracle.
//!
//! `min 0.5 u'Gu + c'u  s.t.  a_i'u <= b_i`. The optimum `u*`, the active
//! set and positive multipliers are drawn first; `c` and `b` are then
//! chosen to make them the KKT point, so LICQ (generic rows, at most `n`
//! active) and strict complementarity hold by construction.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ocp::{BoundSense, ConstraintDef, ConstraintFn, OcpSpec, StageRange};

#[derive(Clone, Debug, PartialEq)]
pub struct QpInstance {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub planted_active: BTreeSet<usize>,
}

pub fn constraint_name(i: usize) -> String {
    format!("g{i}")
}

impl QpInstance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Self {
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let g = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let n_active = rng.random_range(0..=m.min(n));
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        let planted_active: BTreeSet<usize> = idx[..n_active].iter().copied().collect();
        let mut lambda = DVector::zeros(m);
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let ax = (a.row(i) * &x)[0];
            if planted_active.contains(&i) {
                lambda[i] = rng.random_range(0.2..2.0);
                b[i] = ax;
            } else {
                b[i] = ax + rng.random_range(0.2..1.5);
            }
        }
        let c = -(&g * &x) - a.transpose() * &lambda;
        Self { g, c, a, b, planted_active }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.g.nrows(), self.a.nrows())
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        0.5 * u.dot(&(&self.g * &u)) + self.c.dot(&u)
    }

    /// One-stage control problem: inputs are the QP variables, the state is a dummy.
    pub fn to_ocp(&self) -> OcpSpec {
        let (n, m) = self.dims();
        let g = self.g.clone();
        let c = self.c.clone();
        let mut spec = OcpSpec::new(
            1,
            1,
            n,
            1,
            Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| vec![x[0]]),
            Arc::new(move |_x: &[f64], u: &[f64]| {
                let u = DVector::from_column_slice(u);
                0.5 * u.dot(&(&g * &u)) + c.dot(&u)
            }),
            Arc::new(|_x: &[f64]| 0.0),
        );
        for i in 0..m {
            let row: Vec<f64> = self.a.row(i).iter().copied().collect();
            let f: ConstraintFn = Arc::new(move |_x: &[f64], u: &[f64], _d: &[f64]| {
                row.iter().zip(u).map(|(a, v)| a * v).sum()
            });
            spec = spec.with_constraint(ConstraintDef::hard(constraint_name(i), BoundSense::Upper, self.b[i], StageRange::single(0), f));
        }
        spec
    }

    /// Enumerate every working set, solve its equality-constrained KKT
    /// system and keep the feasible point with nonnegative multipliers and
    /// the lowest objective. Returns the minimizer and its binding rows.
    pub fn brute_force(&self) -> Option<(Vec<f64>, BTreeSet<usize>)> {
        let (n, m) = self.dims();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let w: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            if w.len() > n {
                continue;
            }
            let k = n + w.len();
            let mut kkt = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.g);
            for j in 0..n {
                rhs[j] = -self.c[j];
            }
            for (r, &i) in w.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = self.a[(i, j)];
                    kkt[(j, n + r)] = self.a[(i, j)];
                }
                rhs[n + r] = self.b[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            if (0..w.len()).any(|r| sol[n + r] < -1e-10) {
                continue;
            }
            if (0..m).any(|i| (self.a.row(i) * &x)[0] > self.b[i] + 1e-9) {
                continue;
            }
            let u: Vec<f64> = x.iter().copied().collect();
            let f = self.objective(&u);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf - 1e-12) {
                best = Some((f, u));
            }
        }
        best.map(|(_, u)| {
            let ud = DVector::from_column_slice(&u);
            let binding = (0..m).filter(|&i| ((self.a.row(i) * &ud)[0] - self.b[i]).abs() <= 1e-8).collect();
            (u, binding)
        })
    }
}

/// `count` instances with 2..=8 variables and 1..=6 constraints.
pub fn qp_suite(count: usize, seed: u64) -> Vec<QpInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=8);
            let m = rng.random_range(1..=6);
            QpInstance::random(&mut rng, n, m)
        })
        .collect()
}
