//! SQP over the direct transcription of an [`OcpSpec`].
//!
//! Decision variables are the states `x_1..x_H` and inputs `u_0..u_{H-1}`;
//! the dynamics enter as defect equalities `f(x_k, u_k, d_k) - x_{k+1} = 0`.
//! Each QP subproblem eliminates the state steps through the linearized
//! defects (`dx = S du + e`) and is solved by the dual active-set method in
//! [`super::qp`]. Dynamics multipliers are recovered afterwards by the
//! adjoint recursion.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::qp::{solve_qp, QpStatus};
use super::{SolveTrace, SolverConfig, TraceRow};
use crate::ocp::{
    ConstraintDef, ConstraintKind, DecisionContext, OcpSolution, OcpSpec, SolverStatus,
    StageMultiplier,
};

/// One hard constraint instance `g(x_k, u_k, d_k) <= 0`.
struct Row<'a> {
    def: &'a ConstraintDef,
    stage: usize,
}

struct Problem<'a> {
    spec: &'a OcpSpec,
    ctx: &'a DecisionContext,
    cfg: &'a SolverConfig,
    nx: usize,
    nu: usize,
    h: usize,
    rows: Vec<Row<'a>>,
    soft: Vec<(&'a ConstraintDef, Vec<usize>)>,
    zero_u: Vec<f64>,
}

#[derive(Clone)]
struct Iterate {
    /// `x[0]` is the measured state and never changes.
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

/// Per-constraint l1 penalty weights, kept above the multiplier magnitudes.
struct Penalty {
    defect: Vec<Vec<f64>>,
    rows: Vec<f64>,
}

impl Penalty {
    fn raise(w: &mut f64, mult: f64) {
        if *w < 1.1 * mult.abs() {
            *w = 2.0 * mult.abs() + 1e-3;
        }
    }

    fn update(&mut self, lambda: &[f64], mu: &[DVector<f64>]) {
        for (w, l) in self.rows.iter_mut().zip(lambda) {
            Self::raise(w, *l);
        }
        for (wk, mk) in self.defect.iter_mut().zip(mu) {
            for (w, m) in wk.iter_mut().zip(mk.iter()) {
                Self::raise(w, *m);
            }
        }
    }
}

struct Linearization {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    defects: Vec<DVector<f64>>,
    /// Gradient of the objective per stage over `(x_k, u_k)`; terminal over `x_H`.
    grad: Vec<DVector<f64>>,
    g: Vec<f64>,
    /// Constraint gradients over `(x_k, u_k)`.
    g_grad: Vec<DVector<f64>>,
}

fn fd_step(v: f64, rel: f64) -> f64 {
    rel * v.abs().max(1.0)
}

impl<'a> Problem<'a> {
    fn new(spec: &'a OcpSpec, ctx: &'a DecisionContext, cfg: &'a SolverConfig) -> Self {
        let h = spec.horizon;
        let mut rows = Vec::new();
        let mut soft = Vec::new();
        for (def, stages) in spec.all_constraints() {
            match def.kind {
                ConstraintKind::HardInequality => {
                    rows.extend(stages.iter().map(|stage| Row { def, stage }));
                }
                ConstraintKind::SoftPenalty => soft.push((def, stages.iter().collect())),
            }
        }
        Self {
            spec,
            ctx,
            cfg,
            nx: spec.state_dim(),
            nu: spec.input_dim(),
            h,
            rows,
            soft,
            zero_u: vec![0.0; spec.input_dim()],
        }
    }

    fn d(&self, k: usize) -> &[f64] {
        self.ctx.disturbance_at(k)
    }

    fn stage_u<'b>(&'b self, it: &'b Iterate, k: usize) -> &'b [f64] {
        if k < self.h {
            &it.u[k]
        } else {
            &self.zero_u
        }
    }

    /// Objective contribution of stage `k` (terminal when `k == H`).
    fn stage_objective(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        let mut v = if k < self.h {
            (self.spec.stage_cost)(x, u)
        } else {
            (self.spec.terminal_cost)(x)
        };
        for (def, stages) in &self.soft {
            if stages.contains(&k) {
                v += def.penalty(x, u, self.d(k));
            }
        }
        v
    }

    fn objective(&self, it: &Iterate) -> f64 {
        (0..=self.h)
            .map(|k| self.stage_objective(k, &it.x[k], self.stage_u(it, k)))
            .sum()
    }

    fn row_value(&self, row: &Row, it: &Iterate) -> f64 {
        row.def
            .violation(&it.x[row.stage], self.stage_u(it, row.stage), self.d(row.stage))
    }

    /// Weighted l1 infeasibility: defect components, then hard rows.
    fn infeasibility(&self, it: &Iterate, pen: &Penalty) -> f64 {
        let mut total = 0.0;
        for k in 0..self.h {
            let next = (self.spec.dynamics)(&it.x[k], &it.u[k], self.d(k));
            for i in 0..self.nx {
                total += pen.defect[k][i] * (next[i] - it.x[k + 1][i]).abs();
            }
        }
        for (r, w) in self.rows.iter().zip(&pen.rows) {
            total += w * self.row_value(r, it).max(0.0);
        }
        total
    }

    fn merit(&self, it: &Iterate, pen: &Penalty) -> f64 {
        self.objective(it) + self.infeasibility(it, pen)
    }

    /// Central-difference gradient of `fun` over the concatenated `(x, u)`.
    fn gradient(&self, x: &[f64], u: &[f64], fun: impl Fn(&[f64], &[f64]) -> f64) -> DVector<f64> {
        let (nx, nu) = (x.len(), u.len());
        let mut g = DVector::zeros(nx + nu);
        let mut xv = x.to_vec();
        let mut uv = u.to_vec();
        for i in 0..nx {
            let s = fd_step(x[i], self.cfg.fd_step);
            xv[i] = x[i] + s;
            let fp = fun(&xv, &uv);
            xv[i] = x[i] - s;
            let fm = fun(&xv, &uv);
            xv[i] = x[i];
            g[i] = (fp - fm) / (2.0 * s);
        }
        for i in 0..nu {
            let s = fd_step(u[i], self.cfg.fd_step);
            uv[i] = u[i] + s;
            let fp = fun(&xv, &uv);
            uv[i] = u[i] - s;
            let fm = fun(&xv, &uv);
            uv[i] = u[i];
            g[nx + i] = (fp - fm) / (2.0 * s);
        }
        g
    }

    fn dynamics_jacobian(&self, x: &[f64], u: &[f64], d: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (nx, nu) = (self.nx, self.nu);
        if let Some(jac) = &self.spec.dynamics_jacobian {
            let (a, b) = jac(x, u, d);
            let a = DMatrix::from_fn(nx, nx, |i, j| a[i][j]);
            let b = DMatrix::from_fn(nx, nu, |i, j| b[i][j]);
            return (a, b);
        }
        let f = &self.spec.dynamics;
        let mut a = DMatrix::zeros(nx, nx);
        let mut b = DMatrix::zeros(nx, nu);
        let mut xv = x.to_vec();
        for j in 0..nx {
            let s = fd_step(x[j], self.cfg.fd_step);
            xv[j] = x[j] + s;
            let fp = f(&xv, u, d);
            xv[j] = x[j] - s;
            let fm = f(&xv, u, d);
            xv[j] = x[j];
            for i in 0..nx {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * s);
            }
        }
        let mut uv = u.to_vec();
        for j in 0..nu {
            let s = fd_step(u[j], self.cfg.fd_step);
            uv[j] = u[j] + s;
            let fp = f(x, &uv, d);
            uv[j] = u[j] - s;
            let fm = f(x, &uv, d);
            uv[j] = u[j];
            for i in 0..nx {
                b[(i, j)] = (fp[i] - fm[i]) / (2.0 * s);
            }
        }
        (a, b)
    }

    fn linearize(&self, it: &Iterate) -> Linearization {
        let (h, nx) = (self.h, self.nx);
        let mut a = Vec::with_capacity(h);
        let mut b = Vec::with_capacity(h);
        let mut defects = Vec::with_capacity(h);
        for k in 0..h {
            let d = self.d(k);
            let (ak, bk) = self.dynamics_jacobian(&it.x[k], &it.u[k], d);
            let next = (self.spec.dynamics)(&it.x[k], &it.u[k], d);
            defects.push(DVector::from_fn(nx, |i, _| next[i] - it.x[k + 1][i]));
            a.push(ak);
            b.push(bk);
        }
        let grad = (0..=h)
            .map(|k| {
                self.gradient(&it.x[k], self.stage_u(it, k), |x, u| self.stage_objective(k, x, u))
            })
            .collect();
        let g = self.rows.iter().map(|r| self.row_value(r, it)).collect();
        let g_grad = self
            .rows
            .iter()
            .map(|r| {
                let d = self.d(r.stage);
                self.gradient(&it.x[r.stage], self.stage_u(it, r.stage), |x, u| {
                    r.def.violation(x, u, d)
                })
            })
            .collect();
        Linearization {
            a,
            b,
            defects,
            grad,
            g,
            g_grad,
        }
    }

    /// Lagrangian Hessian block of stage `k`.
    fn hessian_block(&self, it: &Iterate, k: usize, lambda: &[f64], mu: &[DVector<f64>]) -> DMatrix<f64> {
        let terminal = k == self.h;
        let nv = if terminal { self.nx } else { self.nx + self.nu };
        let d = self.d(k);
        let rows: Vec<(usize, f64)> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, r)| r.stage == k && lambda[*i] != 0.0)
            .map(|(i, _)| (i, lambda[i]))
            .collect();
        let phi = |v: &[f64]| -> f64 {
            let (x, u) = if terminal {
                (v, self.zero_u.as_slice())
            } else {
                v.split_at(self.nx)
            };
            let mut s = self.stage_objective(k, x, u);
            for &(i, l) in &rows {
                s += l * self.rows[i].def.violation(x, u, d);
            }
            if !terminal {
                let mk = &mu[k];
                if mk.amax() != 0.0 {
                    let f = (self.spec.dynamics)(x, u, d);
                    s += f.iter().zip(mk.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            s
        };
        let mut v: Vec<f64> = it.x[k].clone();
        if !terminal {
            v.extend_from_slice(&it.u[k]);
        }
        let steps: Vec<f64> = v.iter().map(|&vi| fd_step(vi, 1e-4)).collect();
        let f0 = phi(&v);
        let mut hm = DMatrix::zeros(nv, nv);
        let mut w = v.clone();
        for i in 0..nv {
            w[i] = v[i] + steps[i];
            let fp = phi(&w);
            w[i] = v[i] - steps[i];
            let fm = phi(&w);
            w[i] = v[i];
            hm[(i, i)] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
            for j in 0..i {
                w[i] = v[i] + steps[i];
                w[j] = v[j] + steps[j];
                let fpp = phi(&w);
                w[j] = v[j] - steps[j];
                let fpm = phi(&w);
                w[i] = v[i] - steps[i];
                let fmm = phi(&w);
                w[j] = v[j] + steps[j];
                let fmp = phi(&w);
                w[i] = v[i];
                w[j] = v[j];
                let hij = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j]);
                hm[(i, j)] = hij;
                hm[(j, i)] = hij;
            }
        }
        hm
    }
}

fn clamp_eigen(h: DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let scale = eig.eigenvalues.amax().max(1.0);
    let floor = 1e-8 * scale;
    if eig.eigenvalues.iter().all(|&e| e >= floor) {
        return &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose();
    }
    let clamped = eig.eigenvalues.map(|e| e.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

pub(crate) struct SqpOutcome {
    pub solution: OcpSolution,
    pub trace: SolveTrace,
}

pub(crate) fn run(spec: &OcpSpec, ctx: &DecisionContext, cfg: &SolverConfig) -> SqpOutcome {
    let p = Problem::new(spec, ctx, cfg);
    let (h, nx, nu) = (p.h, p.nx, p.nu);
    let nz = h * nu;
    let mut trace = SolveTrace::default();

    // Cold start: resting inputs and their rollout.
    let u0 = spec.rest_inputs();
    let mut x = Vec::with_capacity(h + 1);
    x.push(ctx.measured_state.clone());
    for k in 0..h {
        let next = (spec.dynamics)(&x[k], &u0[k], ctx.disturbance_at(k));
        x.push(next);
    }
    let mut it = Iterate { x, u: u0 };

    let mut lambda = vec![0.0; p.rows.len()];
    let mut mu: Vec<DVector<f64>> = vec![DVector::zeros(nx); h];
    let mut pen = Penalty { defect: vec![vec![1.0; nx]; h], rows: vec![1.0; p.rows.len()] };
    let mut status = SolverStatus::MaxIter;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut floor_step: Option<f64> = None;

    'outer: for iter in 0..cfg.max_iterations {
        iterations = iter + 1;
        let lin = p.linearize(&it);

        // Condensing: dx_k = S_k du + e_k.
        let mut s_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(h + 1);
        let mut e_blocks: Vec<DVector<f64>> = Vec::with_capacity(h + 1);
        s_blocks.push(DMatrix::zeros(nx, nz));
        e_blocks.push(DVector::zeros(nx));
        for k in 0..h {
            let mut s = &lin.a[k] * &s_blocks[k];
            {
                let mut v = s.view_mut((0, k * nu), (nx, nu));
                v += &lin.b[k];
            }
            let e = &lin.a[k] * &e_blocks[k] + &lin.defects[k];
            s_blocks.push(s);
            e_blocks.push(e);
        }

        let blocks: Vec<DMatrix<f64>> = (0..=h).map(|k| p.hessian_block(&it, k, &lambda, &mu)).collect();

        let mut hr = DMatrix::zeros(nz, nz);
        let mut gr = DVector::zeros(nz);
        for k in 0..=h {
            let hk = &blocks[k];
            let sk = &s_blocks[k];
            let ek = &e_blocks[k];
            let hxx = hk.view((0, 0), (nx, nx));
            let gx = lin.grad[k].rows(0, nx);
            let hxx_s = hxx * sk;
            hr += sk.transpose() * &hxx_s;
            gr += sk.transpose() * (hxx * ek + gx);
            if k < h {
                let hxu = hk.view((0, nx), (nx, nu));
                let huu = hk.view((nx, nx), (nu, nu));
                let gu = lin.grad[k].rows(nx, nu);
                let cross = sk.transpose() * hxu;
                let col = k * nu;
                {
                    let mut v = hr.view_mut((0, col), (nz, nu));
                    v += &cross;
                }
                {
                    let mut v = hr.view_mut((col, 0), (nu, nz));
                    v += cross.transpose();
                }
                {
                    let mut v = hr.view_mut((col, col), (nu, nu));
                    v += huu;
                }
                let mut v = gr.rows_mut(col, nu);
                v += hxu.transpose() * ek + gu;
            }
        }
        hr = (&hr + hr.transpose()) * 0.5;
        if nalgebra::Cholesky::new(hr.clone()).is_none() {
            hr = clamp_eigen(hr);
        }

        // Inequalities: constraint rows then input bounds.
        let mut a_rows: Vec<DVector<f64>> = Vec::new();
        let mut b_vals: Vec<f64> = Vec::new();
        let mut row_of: Vec<Option<usize>> = vec![None; p.rows.len()];
        for (i, row) in p.rows.iter().enumerate() {
            let k = row.stage;
            let gg = &lin.g_grad[i];
            let gx = gg.rows(0, nx);
            let mut arow = s_blocks[k].transpose() * gx;
            if k < h {
                let mut v = arow.rows_mut(k * nu, nu);
                v += gg.rows(nx, nu);
            }
            let rhs = -lin.g[i] - gx.dot(&e_blocks[k]);
            if arow.amax() <= 1e-14 {
                if rhs < -cfg.kkt_tolerance {
                    status = SolverStatus::Infeasible;
                    break 'outer;
                }
                continue;
            }
            row_of[i] = Some(a_rows.len());
            a_rows.push(arow);
            b_vals.push(rhs);
        }
        for k in 0..h {
            for j in 0..nu {
                let (lo, hi) = spec.input_bounds[j];
                let idx = k * nu + j;
                if hi.is_finite() {
                    let mut r = DVector::zeros(nz);
                    r[idx] = 1.0;
                    a_rows.push(r);
                    b_vals.push(hi - it.u[k][j]);
                }
                if lo.is_finite() {
                    let mut r = DVector::zeros(nz);
                    r[idx] = -1.0;
                    a_rows.push(r);
                    b_vals.push(it.u[k][j] - lo);
                }
            }
        }
        let a_mat = DMatrix::from_fn(a_rows.len(), nz, |i, j| a_rows[i][j]);
        let b_vec = DVector::from_vec(b_vals);
        let qp = match solve_qp(&hr, &gr, &a_mat, &b_vec) {
            Ok(q) => q,
            Err(_) => break,
        };
        match qp.status {
            QpStatus::Solved => {}
            QpStatus::Infeasible => {
                status = SolverStatus::Infeasible;
                break;
            }
            QpStatus::MaxIter => break,
        }
        let du = &qp.x;

        let new_lambda: Vec<f64> = row_of
            .iter()
            .map(|r| r.map_or(0.0, |idx| qp.lambda[idx]))
            .collect();

        // Full-space step and QP gradient per stage.
        let dx: Vec<DVector<f64>> = (0..=h).map(|k| &s_blocks[k] * du + &e_blocks[k]).collect();
        let mut stationarity: f64 = 0.0;
        let mut qx: Vec<DVector<f64>> = Vec::with_capacity(h + 1);
        for k in 0..=h {
            let hk = &blocks[k];
            let pk = if k < h {
                let mut v = DVector::zeros(nx + nu);
                v.rows_mut(0, nx).copy_from(&dx[k]);
                v.rows_mut(nx, nu).copy_from(&du.rows(k * nu, nu));
                v
            } else {
                dx[k].clone()
            };
            let hp = hk * &pk;
            if k > 0 {
                stationarity = stationarity.max(hp.amax());
            } else {
                stationarity = stationarity.max(hp.rows(nx, nu).amax());
            }
            qx.push(hp.rows(0, nx) + lin.grad[k].rows(0, nx));
        }

        // Adjoint recursion for the defect multipliers.
        let mut new_mu: Vec<DVector<f64>> = vec![DVector::zeros(nx); h];
        for k in (0..h).rev() {
            let mut m = qx[k + 1].clone();
            for (i, row) in p.rows.iter().enumerate() {
                if row.stage == k + 1 && new_lambda[i] != 0.0 {
                    m.axpy(new_lambda[i], &lin.g_grad[i].rows(0, nx), 1.0);
                }
            }
            if k + 1 < h {
                m += lin.a[k + 1].transpose() * &new_mu[k + 1];
            }
            new_mu[k] = m;
        }

        let grad_scale = lin
            .grad
            .iter()
            .map(|g| g.amax())
            .fold(1.0_f64, f64::max);
        let defect_max = lin.defects.iter().map(|d| d.amax()).fold(0.0_f64, f64::max);
        let g_plus = lin.g.iter().fold(0.0_f64, |m, &g| m.max(g));
        let compl = lin
            .g
            .iter()
            .zip(&new_lambda)
            .fold(0.0_f64, |m, (&g, &l)| m.max((g * l).abs()));
        kkt = (stationarity / grad_scale).max(defect_max).max(g_plus).max(compl);

        let z_norm = it
            .x
            .iter()
            .skip(1)
            .chain(it.u.iter())
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, &v| m.max(v.abs()));
        let p_norm = du.amax().max(dx.iter().map(|d| d.amax()).fold(0.0, f64::max));

        lambda = new_lambda;
        mu = new_mu;

        let active_labels = if cfg.trace {
            p.rows
                .iter()
                .zip(&lambda)
                .filter(|(_, &l)| l > 0.0)
                .map(|(r, _)| r.def.id.at_stage(r.stage))
                .collect()
        } else {
            Vec::new()
        };

        // Below the KKT tolerance a step that stops contracting is
        // finite-difference noise.
        let noise_floor = kkt <= cfg.kkt_tolerance && floor_step.is_some_and(|prev| p_norm > 0.5 * prev);
        floor_step = (kkt <= cfg.kkt_tolerance).then_some(p_norm);
        if noise_floor || (kkt <= cfg.kkt_tolerance && p_norm <= cfg.step_tolerance * (1.0 + z_norm)) {
            status = SolverStatus::Optimal;
            if cfg.trace {
                trace.rows.push(TraceRow {
                    iteration: iter,
                    step_norm: p_norm,
                    kkt_residual: kkt,
                    alpha: 0.0,
                    objective: p.objective(&it),
                    active: active_labels,
                });
            }
            break;
        }

        // l1 merit line search.
        pen.update(&lambda, &mu);
        let infeas = p.infeasibility(&it, &pen);
        let mut directional = 0.0;
        for k in 0..=h {
            directional += lin.grad[k].rows(0, nx).dot(&dx[k]);
            if k < h {
                directional += lin.grad[k].rows(nx, nu).dot(&du.rows(k * nu, nu));
            }
        }
        directional -= infeas;
        let m0 = p.objective(&it) + infeas;
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-10 {
            let trial = step(&it, &dx, du, alpha, nu);
            let m1 = p.merit(&trial, &pen);
            if m1 <= m0 + 1e-4 * alpha * directional.min(0.0) || (m1 - m0).abs() <= 1e-14 * m0.abs().max(1.0) {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        if cfg.trace {
            trace.rows.push(TraceRow {
                iteration: iter,
                step_norm: p_norm,
                kkt_residual: kkt,
                alpha: if accepted.is_some() { alpha } else { 0.0 },
                objective: p.objective(&it),
                active: active_labels,
            });
        }
        match accepted {
            Some(next) => it = next,
            None => {
                // Stalled line search: accept a converged-enough point.
                if kkt <= 1e2 * cfg.kkt_tolerance {
                    status = SolverStatus::Optimal;
                }
                break;
            }
        }
    }

    let multipliers = p
        .rows
        .iter()
        .zip(&lambda)
        .map(|(r, &l)| StageMultiplier {
            id: r.def.id.clone(),
            stage: r.stage,
            value: l,
        })
        .collect();
    let total_cost = p.objective(&it);
    SqpOutcome {
        solution: OcpSolution {
            inputs: it.u,
            states: it.x,
            multipliers,
            total_cost,
            status,
            iterations,
            kkt_residual: kkt,
        },
        trace,
    }
}

fn step(it: &Iterate, dx: &[DVector<f64>], du: &DVector<f64>, alpha: f64, nu: usize) -> Iterate {
    let mut next = it.clone();
    for (k, xk) in next.x.iter_mut().enumerate().skip(1) {
        for (i, v) in xk.iter_mut().enumerate() {
            *v += alpha * dx[k][i];
        }
    }
    for (k, uk) in next.u.iter_mut().enumerate() {
        for (j, v) in uk.iter_mut().enumerate() {
            *v += alpha * du[k * nu + j];
        }
    }
    next
}
