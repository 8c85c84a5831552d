//! PC1 condition selection followed by momentary conditional independence
//! tests, with partial correlation and a Student-t null.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{CausalityError, LaggedCausalGraph, LaggedEdge, TimeSeriesTable};

/// Most conditions used in one PC1 test, and most source parents added in MCI.
pub const MAX_CONDITIONS: usize = 5;
pub const DEFAULT_TAU_MAX: usize = 48;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Required samples beyond `tau_max`.
pub const MIN_EXTRA_SAMPLES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiResult {
    pub partial_correlation: f64,
    pub p_value: f64,
}

/// Partial correlation of `x` and `y` given the columns of `z`.
pub fn partial_correlation(x: &[f64], y: &[f64], z: &[&[f64]]) -> CiResult {
    let n = x.len();
    let k = z.len();
    let df = n as f64 - 2.0 - k as f64;
    if df < 1.0 {
        return CiResult { partial_correlation: 0.0, p_value: 1.0 };
    }
    let design = DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { 1.0 } else { z[c - 1][r] });
    let qr = design.qr();
    let q = qr.q();
    let resid = |v: &[f64]| {
        let v = DVector::from_column_slice(v);
        let proj = &q * (q.transpose() * &v);
        v - proj
    };
    let rx = resid(x);
    let ry = resid(y);
    let denom = (rx.norm_squared() * ry.norm_squared()).sqrt();
    if denom <= 1e-300 {
        return CiResult { partial_correlation: 0.0, p_value: 1.0 };
    }
    let r = (rx.dot(&ry) / denom).clamp(-1.0, 1.0);
    let p = if r.abs() >= 1.0 - 1e-15 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    CiResult { partial_correlation: r, p_value: p }
}

/// Lagged view over the common effective sample window `t = tau_max..N`.
struct Lagged<'a> {
    series: Vec<&'a [f64]>,
    tau_max: usize,
}

impl<'a> Lagged<'a> {
    fn at(&self, var: usize, lag: usize) -> &'a [f64] {
        let s = self.series[var];
        &s[self.tau_max - lag..s.len() - lag]
    }
}

/// Candidate parent `(variable index, lag)`.
type Cand = (usize, usize);

fn pc1(data: &Lagged, names: &[&str], target: usize, alpha: f64) -> Vec<Cand> {
    let nv = data.series.len();
    let mut parents: Vec<(Cand, f64)> = (0..nv)
        .flat_map(|i| (1..=data.tau_max).map(move |lag| ((i, lag), f64::INFINITY)))
        .collect();
    let y = data.at(target, 0);
    let canonical = |a: &Cand, b: &Cand| names[a.0].cmp(names[b.0]).then(a.1.cmp(&b.1));
    let mut dim = 0;
    loop {
        if parents.len() <= dim || dim > MAX_CONDITIONS {
            break;
        }
        let snapshot: Vec<Cand> = parents.iter().map(|(c, _)| *c).collect();
        let mut next = Vec::with_capacity(parents.len());
        for (cand, strength) in &parents {
            let conds: Vec<&[f64]> = snapshot
                .iter()
                .filter(|c| *c != cand)
                .take(dim)
                .map(|&(i, lag)| data.at(i, lag))
                .collect();
            let res = partial_correlation(data.at(cand.0, cand.1), y, &conds);
            if res.p_value <= alpha {
                next.push((*cand, strength.min(res.partial_correlation.abs())));
            }
        }
        next.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(canonical(&a.0, &b.0)));
        parents = next;
        dim += 1;
    }
    parents.into_iter().map(|(c, _)| c).collect()
}

/// Benjamini-Hochberg adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        q[i] = running.min(1.0);
    }
    q
}

pub fn fit_pcmci(data: &TimeSeriesTable, tau_max: usize, alpha: f64) -> Result<LaggedCausalGraph, CausalityError> {
    if tau_max < 1 {
        return Err(CausalityError::Config("tau_max must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CausalityError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = data.len();
    if n <= tau_max + MIN_EXTRA_SAMPLES {
        return Err(CausalityError::TooFewSamples { have: n, need: tau_max + MIN_EXTRA_SAMPLES + 1 });
    }
    let columns: Vec<Vec<f64>> = (0..data.variables.len()).map(|j| data.column_at(j)).collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (j, name) in data.variables.iter().enumerate() {
        let col = &columns[j];
        if col.iter().all(|v| *v == col[0]) {
            log::warn!("series `{name}` is constant and was excluded from discovery");
            excluded.push(name.clone());
        } else {
            kept.push(j);
        }
    }
    // Canonical variable order makes the result independent of column order.
    kept.sort_by(|a, b| data.variables[*a].cmp(&data.variables[*b]));
    let names: Vec<&str> = kept.iter().map(|&j| data.variables[j].as_str()).collect();
    let lagged = Lagged {
        series: kept.iter().map(|&j| columns[j].as_slice()).collect(),
        tau_max,
    };
    let nv = kept.len();
    let parents: Vec<Vec<Cand>> = (0..nv).into_par_iter().map(|j| pc1(&lagged, &names, j, alpha)).collect();

    let tests: Vec<(usize, Cand, CiResult)> = (0..nv)
        .into_par_iter()
        .flat_map_iter(|j| {
            let lagged = &lagged;
            let parents = &parents;
            (0..nv).flat_map(move |i| {
                (1..=tau_max).map(move |lag| {
                    let mut cond_ids: Vec<Cand> = parents[j].iter().copied().filter(|c| *c != (i, lag)).collect();
                    for &(k, l) in parents[i].iter().filter(|&&(_, l)| l + lag <= tau_max).take(MAX_CONDITIONS) {
                        if !cond_ids.contains(&(k, l + lag)) {
                            cond_ids.push((k, l + lag));
                        }
                    }
                    let conds: Vec<&[f64]> = cond_ids.iter().map(|&(k, l)| lagged.at(k, l)).collect();
                    (j, (i, lag), partial_correlation(lagged.at(i, lag), lagged.at(j, 0), &conds))
                })
            })
        })
        .collect();

    let q = benjamini_hochberg(&tests.iter().map(|t| t.2.p_value).collect::<Vec<_>>());
    let mut edges: Vec<LaggedEdge> = tests
        .iter()
        .zip(&q)
        .filter(|(_, q)| **q <= alpha)
        .map(|((j, (i, lag), res), q)| LaggedEdge {
            source: names[*i].to_string(),
            target: names[*j].to_string(),
            lag: *lag,
            p_value: res.p_value,
            q_value: *q,
            partial_correlation: res.partial_correlation,
        })
        .collect();
    edges.sort_by(|a, b| a.target.cmp(&b.target).then(a.source.cmp(&b.source)).then(a.lag.cmp(&b.lag)));
    let mut variables: Vec<String> = data.variables.clone();
    variables.sort();
    Ok(LaggedCausalGraph {
        variables,
        tau_max,
        alpha,
        edges,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn partial_correlation_removes_common_cause() {
        let z = noise(3000, 1);
        let ex = noise(3000, 2);
        let ey = noise(3000, 3);
        let x: Vec<f64> = z.iter().zip(&ex).map(|(z, e)| z + 0.5 * e).collect();
        let y: Vec<f64> = z.iter().zip(&ey).map(|(z, e)| z + 0.5 * e).collect();
        let marginal = partial_correlation(&x, &y, &[]);
        assert!(marginal.partial_correlation > 0.7 && marginal.p_value < 1e-10);
        let given = partial_correlation(&x, &y, &[&z]);
        assert!(given.partial_correlation.abs() < 0.06);
    }

    #[test]
    fn partial_correlation_matches_closed_form() {
        // rho_xy.z = (r_xy - r_xz r_yz) / sqrt((1 - r_xz^2)(1 - r_yz^2))
        let x = noise(200, 4);
        let z = noise(200, 5);
        let y: Vec<f64> = x.iter().zip(&z).zip(noise(200, 6)).map(|((x, z), e)| 0.3 * x + 0.8 * z + e).collect();
        let r = |a: &[f64], b: &[f64]| partial_correlation(a, b, &[]).partial_correlation;
        let (rxy, rxz, ryz) = (r(&x, &y), r(&x, &z), r(&y, &z));
        let expected = (rxy - rxz * ryz) / ((1.0 - rxz * rxz) * (1.0 - ryz * ryz)).sqrt();
        assert!((partial_correlation(&x, &y, &[&z]).partial_correlation - expected).abs() < 1e-10);
    }

    #[test]
    fn t_test_p_value_for_known_correlation() {
        // n = 27, r = 0.5: t = 0.5 * sqrt(25 / 0.75) = 2.8868, two-sided p = 0.00791 with 25 df.
        let n = 27;
        let a: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64).collect();
        let b0: Vec<f64> = (0..n).map(|i| ((i * 5) % 13) as f64).collect();
        // Mix b0 with a to hit r = 0.5 exactly.
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b0));
        let ac: Vec<f64> = a.iter().map(|v| v - ma).collect();
        let na = ac.iter().map(|v| v * v).sum::<f64>().sqrt();
        let proj: f64 = b0.iter().map(|v| v - mb).zip(&ac).map(|(b, a)| b * a).sum::<f64>() / (na * na);
        let perp: Vec<f64> = b0.iter().map(|v| v - mb).zip(&ac).map(|(b, a)| b - proj * a).collect();
        let np = perp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b: Vec<f64> = ac.iter().zip(&perp).map(|(a, p)| 0.5 * a / na + (0.75f64).sqrt() * p / np).collect();
        let res = partial_correlation(&a, &b, &[]);
        assert!((res.partial_correlation - 0.5).abs() < 1e-12);
        assert!((res.p_value - 0.007_912_738).abs() < 1e-7, "{}", res.p_value);
    }

    #[test]
    fn bh_adjustment_matches_hand_values() {
        let q = benjamini_hochberg(&[0.01, 0.04, 0.03, 0.2]);
        let expected = [0.04, 0.0533333333333, 0.0533333333333, 0.2];
        for (a, b) in q.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
