//! Epsilon support vector regression with an RBF kernel, trained by
//! sequential minimal optimization.
//!
//! The dual is solved in the doubled variable space `beta = [alpha; alpha*]`
//! with sign labels `y_hat = [+1^n; -1^n]`, box constraints `[0, C]` and the
//! equality constraint `y_hatᵀ beta = 0`. Pairs are chosen by maximal KKT
//! violation with second-order tie-breaking; the solver stops when the
//! violation gap drops below `tol` or an iteration cap is hit.
//!
//! Inputs are standardized per dimension with training statistics before any
//! kernel evaluation, so one kernel width works across feature scales.

use crate::error::{Error, Result};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Training settings. `gamma: None` selects the data-driven default
/// `1 / (dim * mean feature variance)`, computed on the standardized inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 10.0,
            epsilon: 0.1,
            gamma: None,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::invalid("regularization C must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be nonnegative"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::invalid("kernel width gamma must be positive"));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        Ok(())
    }
}

/// Trained regressor: standardization statistics, support vectors (already
/// standardized), their dual coefficients `alpha - alpha*`, and the bias.
#[derive(Clone, Debug)]
pub struct SvrModel {
    pub gamma: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub support: Mat<f64>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

/// Raw dual solution, exposed for oracle comparisons in tests.
#[derive(Clone, Debug)]
pub struct SvrSolution {
    /// `2n` dual variables, `[alpha; alpha*]`.
    pub beta: Vec<f64>,
    pub bias: f64,
    /// Final dual objective value.
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before reaching `tol`.
    pub converged: bool,
}

const TAU: f64 = 1e-12;

/// Sign label of dual variable `s` in the doubled space.
#[inline]
fn ysign(s: usize, n: usize) -> f64 {
    if s < n {
        1.0
    } else {
        -1.0
    }
}

/// Minimizes `1/2 betaᵀ Q_hat beta + p_hatᵀ beta` over the SVR dual feasible
/// set, where `Q_hat[s][t] = y_hat[s] y_hat[t] K[s%n][t%n]` and
/// `p_hat = [eps - y; eps + y]`.
pub fn solve_dual(
    k: &Mat<f64>,
    y: &[f64],
    c: f64,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SvrSolution> {
    let n = y.len();
    if k.rows() != n || k.cols() != n {
        return Err(Error::invalid("kernel matrix shape does not match targets"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot solve an empty problem"));
    }

    let m2 = 2 * n;
    let mut beta = vec![0.0f64; m2];
    // Gradient of the dual objective; at beta = 0 it equals p_hat.
    let mut grad: Vec<f64> = (0..m2)
        .map(|s| {
            if s < n {
                epsilon - y[s]
            } else {
                epsilon + y[s - n]
            }
        })
        .collect();

    let in_up = |s: usize, beta: &[f64]| -> bool {
        if s < n {
            beta[s] < c
        } else {
            beta[s] > 0.0
        }
    };
    let in_low = |s: usize, beta: &[f64]| -> bool {
        if s < n {
            beta[s] > 0.0
        } else {
            beta[s] < c
        }
    };

    let mut iterations = 0;
    let mut converged = false;
    let (mut gmax, mut gmin);

    loop {
        // Working-set selection. First index: the largest -y_hat G over I_up.
        gmax = f64::NEG_INFINITY;
        gmin = f64::INFINITY;
        let mut i_best = usize::MAX;
        for s in 0..m2 {
            let v = -ysign(s, n) * grad[s];
            if in_up(s, &beta) && v > gmax {
                gmax = v;
                i_best = s;
            }
            if in_low(s, &beta) {
                gmin = gmin.min(v);
            }
        }
        if i_best == usize::MAX || gmax - gmin <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }

        // Second index: largest second-order objective decrease among
        // violating candidates in I_low.
        let i = i_best;
        let yi = ysign(i, n);
        let ki = k.row(i % n);
        let kii = ki[i % n];
        let mut j_best = usize::MAX;
        let mut best_gain = f64::INFINITY;
        for t in 0..m2 {
            if !in_low(t, &beta) {
                continue;
            }
            let vt = -ysign(t, n) * grad[t];
            if vt >= gmax {
                continue;
            }
            let b_it = gmax - vt;
            let yt = ysign(t, n);
            let ktt = k[(t % n, t % n)];
            let curv = (kii + ktt - 2.0 * yi * yt * ki[t % n]).max(TAU);
            let gain = -(b_it * b_it) / curv;
            if gain < best_gain {
                best_gain = gain;
                j_best = t;
            }
        }
        if j_best == usize::MAX {
            converged = true;
            break;
        }
        let j = j_best;
        let yj = ysign(j, n);
        let kjj = k[(j % n, j % n)];
        let kij = ki[j % n];

        // One-dimensional descent along (y_i e_i, -y_j e_j).
        let curv = (kii + kjj - 2.0 * yi * yj * kij).max(TAU);
        let d_star = (gmax - (-yj * grad[j])) / curv;
        let hi_i = if yi > 0.0 { c - beta[i] } else { beta[i] };
        let hi_j = if yj > 0.0 { beta[j] } else { c - beta[j] };
        let d = d_star.min(hi_i).min(hi_j);

        let delta_i = yi * d;
        let delta_j = -yj * d;
        beta[i] = (beta[i] + delta_i).clamp(0.0, c);
        beta[j] = (beta[j] + delta_j).clamp(0.0, c);

        let kj = k.row(j % n);
        for s in 0..m2 {
            let ys = ysign(s, n);
            grad[s] += ys * (yi * ki[s % n] * delta_i + yj * kj[s % n] * delta_j);
        }
        iterations += 1;
    }

    // Objective via beta.(grad + p_hat)/2; p_hat is recomputable from eps, y.
    let mut objective = 0.0;
    for s in 0..m2 {
        let p = if s < n {
            epsilon - y[s]
        } else {
            epsilon + y[s - n]
        };
        objective += beta[s] * (grad[s] + p);
    }
    objective *= 0.5;

    // Bias: midpoint of the violation interval; free variables pin it as the
    // gap closes. Empty I_up/I_low fall back to 0.
    let bias = if gmax.is_finite() && gmin.is_finite() {
        (gmax + gmin) / 2.0
    } else {
        0.0
    };

    Ok(SvrSolution {
        beta,
        bias,
        objective,
        iterations,
        converged,
    })
}

/// Per-column mean and reciprocal standard deviation (population variance).
/// Constant columns get scale 0, mapping them to exactly 0.
fn standardization(x: &Mat<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((vv, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let e = v - m;
            *vv += e * e;
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let sd = (v / n as f64).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardize_into(x: &Mat<f64>, mean: &[f64], scale: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.rows(), x.cols(), |r, c| (x[(r, c)] - mean[c]) * scale[c])
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let e = x - y;
        s += e * e;
    }
    (-gamma * s).exp()
}

/// Builds the dense RBF Gram matrix of standardized rows.
pub fn rbf_kernel_matrix(z: &Mat<f64>, gamma: f64) -> Mat<f64> {
    let n = z.rows();
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf(z.row(i), z.row(j), gamma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Trains an RBF epsilon-SVR on feature rows and target speeds.
pub fn train(x: &Mat<f64>, y: &[f64], cfg: &SvrConfig) -> Result<SvrModel> {
    cfg.validate()?;
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid("need at least two training rows"));
    }
    if y.len() != n {
        return Err(Error::invalid("feature and target counts differ"));
    }
    if x.data().iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data must be finite"));
    }

    let (mean, scale) = standardization(x);
    let z = standardize_into(x, &mean, &scale);

    let gamma = match cfg.gamma {
        Some(g) => g,
        None => {
            let d = z.cols();
            let (_, zscale) = standardization(&z);
            // Variance of column c of z is 1/zscale[c]^2 (0 when constant).
            let mean_var: f64 = zscale
                .iter()
                .map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 0.0 })
                .sum::<f64>()
                / d as f64;
            if mean_var > 0.0 {
                1.0 / (d as f64 * mean_var)
            } else {
                1.0
            }
        }
    };

    let k = rbf_kernel_matrix(&z, gamma);
    let sol = solve_dual(&k, y, cfg.c, cfg.epsilon, cfg.tol, cfg.max_iter)?;

    let mut rows = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        let theta = sol.beta[i] - sol.beta[n + i];
        if theta.abs() > 1e-12 {
            rows.push(i);
            coef.push(theta);
        }
    }
    let mut support = Mat::zeros(rows.len(), x.cols());
    for (dst, &src) in rows.iter().enumerate() {
        support.row_mut(dst).copy_from_slice(z.row(src));
    }

    Ok(SvrModel {
        gamma,
        mean,
        scale,
        support,
        coef,
        bias: sol.bias,
    })
}

impl SvrModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "input has {} features, the model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let z: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect();
        let mut out = self.bias;
        for (i, c) in self.coef.iter().enumerate() {
            out += c * rbf(self.support.row(i), &z, self.gamma);
        }
        Ok(out)
    }

    /// Writes the model as a line-oriented text file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            writeln!(out, "svr 1")?;
            writeln!(out, "gamma {}", self.gamma)?;
            writeln!(out, "bias {}", self.bias)?;
            writeln!(out, "dim {}", self.dim())?;
            for (name, vals) in [("mean", &self.mean), ("scale", &self.scale)] {
                write!(out, "{name}")?;
                for v in vals.iter() {
                    write!(out, " {v}")?;
                }
                writeln!(out)?;
            }
            writeln!(out, "nsv {}", self.n_support())?;
            for (i, c) in self.coef.iter().enumerate() {
                write!(out, "{c}")?;
                for v in self.support.row(i) {
                    write!(out, " {v}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((_, Err(e))) => Err(Error::io(path, e)),
                None => Err(Error::parse(path, "end of file", format!("missing {what}"))),
            }
        };
        let expect_scalar = |line: &str, key: &str, ln: usize| -> Result<f64> {
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| Error::parse(path, format!("line {ln}"), format!("expected `{key}`")))?;
            rest.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(path, format!("line {ln}"), format!("bad number: {e}")))
        };
        let parse_vec = |line: &str, key: &str, want: usize, ln: usize| -> Result<Vec<f64>> {
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| Error::parse(path, format!("line {ln}"), format!("expected `{key}`")))?;
            let vals: Vec<f64> = rest
                .split_whitespace()
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("line {ln}"), format!("bad number: {e}")))?;
            if vals.len() != want {
                return Err(Error::parse(
                    path,
                    format!("line {ln}"),
                    format!("expected {want} values, found {}", vals.len()),
                ));
            }
            Ok(vals)
        };

        let (ln, header) = next("header")?;
        if header.trim() != "svr 1" {
            return Err(Error::parse(path, format!("line {ln}"), "unrecognized model header"));
        }
        let (ln, l) = next("gamma")?;
        let gamma = expect_scalar(&l, "gamma", ln)?;
        let (ln, l) = next("bias")?;
        let bias = expect_scalar(&l, "bias", ln)?;
        let (ln, l) = next("dim")?;
        let dim = expect_scalar(&l, "dim", ln)? as usize;
        let (ln, l) = next("mean")?;
        let mean = parse_vec(&l, "mean", dim, ln)?;
        let (ln, l) = next("scale")?;
        let scale = parse_vec(&l, "scale", dim, ln)?;
        let (ln, l) = next("nsv")?;
        let nsv = expect_scalar(&l, "nsv", ln)? as usize;
        let mut support = Mat::zeros(nsv, dim);
        let mut coef = Vec::with_capacity(nsv);
        for r in 0..nsv {
            let (ln, l) = next("support vector")?;
            let vals = parse_vec(&l, "", dim + 1, ln)?;
            coef.push(vals[0]);
            support.row_mut(r).copy_from_slice(&vals[1..]);
        }
        Ok(SvrModel {
            gamma,
            mean,
            scale,
            support,
            coef,
            bias,
        })
    }
}

/// Trains one model per `(C, epsilon)` grid point and returns the pair with
/// the lowest validation RMSE; ties prefer smaller C, then smaller epsilon.
pub fn grid_search(
    train_x: &Mat<f64>,
    train_y: &[f64],
    val_x: &Mat<f64>,
    val_y: &[f64],
    grid: &[(f64, f64)],
    base: &SvrConfig,
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::invalid("grid search needs at least one candidate"));
    }
    if val_x.rows() == 0 || val_x.rows() != val_y.len() {
        return Err(Error::invalid("validation set shape mismatch"));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &(c, epsilon) in grid {
        let cfg = SvrConfig {
            c,
            epsilon,
            ..*base
        };
        let model = train(train_x, train_y, &cfg)?;
        let mut se = 0.0;
        for r in 0..val_x.rows() {
            let e = model.predict(val_x.row(r))? - val_y[r];
            se += e * e;
        }
        let rmse = (se / val_y.len() as f64).sqrt();
        let candidate = (rmse, c, epsilon);
        let replace = match best {
            None => true,
            Some(b) => candidate.0 < b.0 || (candidate.0 == b.0 && (candidate.1, candidate.2) < (b.1, b.2)),
        };
        if replace {
            best = Some(candidate);
        }
    }
    let (_, c, epsilon) = best.unwrap();
    Ok((c, epsilon))
}

/// The default hyperparameter grid; includes the reference operating point
/// (C = 10, epsilon = 0.1).
pub fn default_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for c in [0.1, 1.0, 10.0, 100.0] {
        for e in [0.01, 0.1, 1.0] {
            g.push((c, e));
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randn::standard_normal;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Projected gradient descent on the same dual, used as a brute-force
    /// oracle. Projection onto box-intersect-hyperplane is computed by
    /// bisection on the hyperplane multiplier.
    fn pgd_oracle(k: &Mat<f64>, y: &[f64], c: f64, epsilon: f64, iters: usize) -> (Vec<f64>, f64) {
        let n = y.len();
        let m2 = 2 * n;
        let p: Vec<f64> = (0..m2)
            .map(|s| if s < n { epsilon - y[s] } else { epsilon + y[s - n] })
            .collect();
        let q = |s: usize, t: usize| ysign(s, n) * ysign(t, n) * k[(s % n, t % n)];

        let project = |v: &[f64]| -> Vec<f64> {
            // Find lambda with sum_s ysign(s) clip(v_s - lambda ysign(s)) = 0.
            let bound = v.iter().fold(0.0f64, |a, b| a.max(b.abs())) + c + 1.0;
            let (mut lo, mut hi) = (-bound, bound);
            let g = |lambda: f64| -> f64 {
                (0..m2)
                    .map(|s| {
                        let ys = ysign(s, n);
                        ys * (v[s] - lambda * ys).clamp(0.0, c)
                    })
                    .sum()
            };
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let lambda = 0.5 * (lo + hi);
            (0..m2)
                .map(|s| {
                    let ys = ysign(s, n);
                    (v[s] - lambda * ys).clamp(0.0, c)
                })
                .collect()
        };

        // Lipschitz bound: trace of the doubled Hessian.
        let lip: f64 = 2.0 * (0..n).map(|i| k[(i, i)]).sum::<f64>() + 1.0;
        let step = 1.0 / lip;
        let mut beta = project(&vec![0.0; m2]);
        let mut grad = vec![0.0; m2];
        for _ in 0..iters {
            for s in 0..m2 {
                let mut g = p[s];
                for t in 0..m2 {
                    if beta[t] != 0.0 {
                        g += q(s, t) * beta[t];
                    }
                }
                grad[s] = g;
            }
            let v: Vec<f64> = (0..m2).map(|s| beta[s] - step * grad[s]).collect();
            beta = project(&v);
        }
        let mut obj = 0.0;
        for s in 0..m2 {
            let mut g = p[s];
            for t in 0..m2 {
                g += 0.5 * q(s, t) * beta[t];
            }
            obj += beta[s] * g;
        }
        (beta, obj)
    }

    fn dual_objective(k: &Mat<f64>, y: &[f64], epsilon: f64, beta: &[f64]) -> f64 {
        let n = y.len();
        let m2 = 2 * n;
        let mut obj = 0.0;
        for s in 0..m2 {
            let p = if s < n { epsilon - y[s] } else { epsilon + y[s - n] };
            let mut g = p;
            for t in 0..m2 {
                g += 0.5 * ysign(s, n) * ysign(t, n) * k[(s % n, t % n)] * beta[t];
            }
            obj += beta[s] * g;
        }
        obj
    }

    fn random_problem(seed: u64) -> (Mat<f64>, Vec<f64>, f64, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=20usize);
        let d = rng.random_range(1..=5usize);
        let x = Mat::from_fn(n, d, |_, _| standard_normal(&mut rng) * 2.0);
        let w: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..n)
            .map(|r| {
                let mut s = 0.0;
                for (v, wv) in x.row(r).iter().zip(&w) {
                    s += v * wv;
                }
                s + 0.3 * standard_normal(&mut rng)
            })
            .collect();
        let c = [0.5, 2.0, 10.0][rng.random_range(0..3)];
        let eps = [0.01, 0.1, 0.5][rng.random_range(0..3)];
        let gamma = 1.0 / d as f64;
        (x, y, c, eps, gamma)
    }

    #[test]
    fn constant_targets_give_bias_only_model() {
        let x = Mat::from_fn(8, 3, |r, c| (r * 3 + c) as f64 * 0.37);
        let y = vec![80.0; 8];
        let model = train(&x, &y, &SvrConfig::default()).unwrap();
        assert_eq!(model.n_support(), 0);
        assert!((model.bias - 80.0).abs() < 1e-12);
        let p = model.predict(&[0.5, 100.0, -3.0]).unwrap();
        assert!((p - 80.0).abs() < 1e-12);
    }

    #[test]
    fn linear_1d_matches_qp_oracle() {
        let x = Mat::from_fn(6, 1, |r, _| r as f64);
        let y: Vec<f64> = (0..6).map(|r| r as f64).collect();
        let gamma = 0.5;
        let cfg = SvrConfig {
            c: 10.0,
            epsilon: 0.01,
            gamma: Some(gamma),
            ..SvrConfig::default()
        };

        // Oracle on the same standardized kernel problem.
        let (mean, scale) = standardization(&x);
        let z = standardize_into(&x, &mean, &scale);
        let k = rbf_kernel_matrix(&z, gamma);
        let sol = solve_dual(&k, &y, cfg.c, cfg.epsilon, cfg.tol, cfg.max_iter).unwrap();
        assert!(sol.converged);
        let (_, oracle_obj) = pgd_oracle(&k, &y, cfg.c, cfg.epsilon, 60_000);
        assert!(
            (sol.objective - oracle_obj).abs() <= 1e-3,
            "smo {} vs oracle {}",
            sol.objective,
            oracle_obj
        );

        // Full KKT case split on the tube residual r_i = f(x_i) - y_i:
        // zero duals sit inside the tube, free duals on its boundary, and
        // duals at the box bound on or outside it.
        let n = y.len();
        let theta: Vec<f64> = (0..n).map(|i| sol.beta[i] - sol.beta[n + i]).collect();
        let slack = 2.0 * cfg.tol;
        for i in 0..n {
            let mut f = sol.bias;
            for (j, th) in theta.iter().enumerate() {
                f += th * k[(i, j)];
            }
            let resid = (f - y[i]).abs();
            let hi = sol.beta[i].max(sol.beta[n + i]);
            if hi <= 1e-8 {
                assert!(resid <= cfg.epsilon + slack, "interior point {i}: {resid}");
            } else if hi >= cfg.c - 1e-8 {
                assert!(resid >= cfg.epsilon - slack, "bound point {i}: {resid}");
            } else {
                assert!(
                    (resid - cfg.epsilon).abs() <= slack,
                    "free point {i}: {resid}"
                );
            }
        }
    }

    #[test]
    fn feasibility_and_kkt_on_random_problems() {
        for seed in 0..20u64 {
            let (x, y, c, eps, gamma) = random_problem(seed);
            let (mean, scale) = standardization(&x);
            let z = standardize_into(&x, &mean, &scale);
            let k = rbf_kernel_matrix(&z, gamma);
            let tol = 1e-3;
            let sol = solve_dual(&k, &y, c, eps, tol, 100_000).unwrap();
            assert!(sol.converged, "seed {seed}");

            let n = y.len();
            let mut eq = 0.0;
            for s in 0..2 * n {
                assert!(
                    (0.0..=c).contains(&sol.beta[s]),
                    "seed {seed}: beta[{s}] = {} outside [0, {c}]",
                    sol.beta[s]
                );
                eq += ysign(s, n) * sol.beta[s];
            }
            assert!(eq.abs() <= 1e-9, "seed {seed}: equality residual {eq}");

            // KKT: free support vectors sit on the tube boundary.
            let theta: Vec<f64> = (0..n).map(|i| sol.beta[i] - sol.beta[n + i]).collect();
            for i in 0..n {
                let free_alpha = sol.beta[i] > 1e-8 && sol.beta[i] < c - 1e-8;
                let free_star = sol.beta[n + i] > 1e-8 && sol.beta[n + i] < c - 1e-8;
                if !(free_alpha || free_star) {
                    continue;
                }
                let mut f = sol.bias;
                for (j, th) in theta.iter().enumerate() {
                    f += th * k[(i, j)];
                }
                let resid = (f - y[i]).abs();
                assert!(
                    (resid - eps).abs() <= tol,
                    "seed {seed} point {i}: |f - y| = {resid}, eps = {eps}"
                );
            }
        }
    }

    #[test]
    fn dual_objective_matches_qp_oracle_on_50_problems() {
        for seed in 100..150u64 {
            let (x, y, c, eps, gamma) = random_problem(seed);
            let (mean, scale) = standardization(&x);
            let z = standardize_into(&x, &mean, &scale);
            let k = rbf_kernel_matrix(&z, gamma);
            let sol = solve_dual(&k, &y, c, eps, 1e-4, 200_000).unwrap();
            let (_, oracle_obj) = pgd_oracle(&k, &y, c, eps, 30_000);
            // Both are upper bounds on the true minimum; they must agree.
            assert!(
                (sol.objective - oracle_obj).abs() <= 1e-3,
                "seed {seed}: smo {} vs oracle {}",
                sol.objective,
                oracle_obj
            );
            // Recomputing the objective from beta agrees with the solver's
            // incremental bookkeeping.
            let direct = dual_objective(&k, &y, eps, &sol.beta);
            assert!(
                (direct - sol.objective).abs() <= 1e-6 * (1.0 + direct.abs()),
                "seed {seed}: direct {direct} vs tracked {}",
                sol.objective
            );
        }
    }

    #[test]
    fn input_scaling_does_not_change_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Mat::from_fn(30, 4, |_, _| standard_normal(&mut rng));
        let y: Vec<f64> = (0..30)
            .map(|r| x.row(r).iter().sum::<f64>() * 10.0 + 50.0)
            .collect();
        let cfg = SvrConfig::default();
        let a = train(&x, &y, &cfg).unwrap();
        let xs = Mat::from_fn(30, 4, |r, c| x[(r, c)] * 1000.0);
        let b = train(&xs, &y, &cfg).unwrap();
        for r in 0..30 {
            let pa = a.predict(x.row(r)).unwrap();
            let mut big = [0.0; 4];
            for (d, v) in big.iter_mut().zip(x.row(r)) {
                *d = v * 1000.0;
            }
            let pb = b.predict(&big).unwrap();
            assert!((pa - pb).abs() < 1e-6, "row {r}: {pa} vs {pb}");
        }
    }

    #[test]
    fn degenerate_identical_rows_converge_to_compromise() {
        let x = Mat::from_fn(4, 2, |_, _| 1.0);
        let y = vec![10.0, 20.0, 30.0, 40.0];
        let model = train(&x, &y, &SvrConfig::default()).unwrap();
        let p = model.predict(&[1.0, 1.0]).unwrap();
        assert!(p.is_finite());
        // All rows identical: the best single prediction sits between the
        // extremes.
        assert!(p > 10.0 && p < 40.0, "compromise prediction {p}");
    }

    #[test]
    fn rejects_bad_input() {
        let x = Mat::from_fn(5, 2, |r, c| (r + c) as f64);
        let y = vec![1.0; 4];
        assert!(train(&x, &y, &SvrConfig::default()).is_err());
        let one = Mat::from_fn(1, 2, |_, _| 0.0);
        assert!(train(&one, &[1.0], &SvrConfig::default()).is_err());
        let bad = SvrConfig {
            c: 0.0,
            ..SvrConfig::default()
        };
        let y5 = vec![1.0; 5];
        assert!(train(&x, &y5, &bad).is_err());
        let model = train(&x, &y5, &SvrConfig::default()).unwrap();
        assert!(model.predict(&[1.0]).is_err());
    }

    #[test]
    fn grid_search_picks_best_and_breaks_ties_downward() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Mat::from_fn(40, 3, |_, _| standard_normal(&mut rng));
        let y: Vec<f64> = (0..40)
            .map(|r| x.row(r).iter().sum::<f64>() * 15.0 + 60.0)
            .collect();
        let vx = Mat::from_fn(15, 3, |_, _| standard_normal(&mut rng));
        let vy: Vec<f64> = (0..15)
            .map(|r| vx.row(r).iter().sum::<f64>() * 15.0 + 60.0)
            .collect();
        let base = SvrConfig::default();

        // Singleton grid returns its only candidate.
        assert_eq!(
            grid_search(&x, &y, &vx, &vy, &[(10.0, 0.1)], &base).unwrap(),
            (10.0, 0.1)
        );

        // A vanishingly small C cannot fit targets around 60: the usable
        // point wins.
        let got = grid_search(&x, &y, &vx, &vy, &[(1e-8, 0.1), (10.0, 0.1)], &base).unwrap();
        assert_eq!(got, (10.0, 0.1));

        // Constant targets: every model is exact, ties resolve to the
        // smallest C, then the smallest epsilon.
        let yc = vec![80.0; 40];
        let vyc = vec![80.0; 15];
        let got = grid_search(&x, &yc, &vx, &vyc, &[(100.0, 0.1), (10.0, 0.1)], &base).unwrap();
        assert_eq!(got, (10.0, 0.1));
        let got = grid_search(&x, &yc, &vx, &vyc, &[(10.0, 1.0), (10.0, 0.01)], &base).unwrap();
        assert_eq!(got, (10.0, 0.01));

        assert!(grid_search(&x, &y, &vx, &vy, &[], &base).is_err());
        assert!(default_grid().contains(&(10.0, 0.1)));
        assert_eq!(default_grid().len(), 12);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Mat::from_fn(25, 5, |_, _| standard_normal(&mut rng) * 3.0);
        let y: Vec<f64> = (0..25).map(|r| x.row(r)[0] * 7.0 + 40.0).collect();
        let model = train(&x, &y, &SvrConfig::default()).unwrap();

        let dir = std::env::temp_dir().join(format!("svr-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.txt");
        model.save(&path).unwrap();
        let loaded = SvrModel::load(&path).unwrap();
        for r in 0..25 {
            let a = model.predict(x.row(r)).unwrap();
            let b = loaded.predict(x.row(r)).unwrap();
            assert_eq!(a, b, "row {r}");
        }
        std::fs::write(&path, "svr 2\n").unwrap();
        assert!(SvrModel::load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn duals_always_feasible(seed in 0u64..10_000) {
                let (x, y, c, eps, gamma) = random_problem(seed);
                let (mean, scale) = standardization(&x);
                let z = standardize_into(&x, &mean, &scale);
                let k = rbf_kernel_matrix(&z, gamma);
                let sol = solve_dual(&k, &y, c, eps, 1e-3, 100_000).unwrap();
                let n = y.len();
                let mut eq = 0.0;
                for s in 0..2 * n {
                    prop_assert!((0.0..=c).contains(&sol.beta[s]));
                    eq += ysign(s, n) * sol.beta[s];
                }
                prop_assert!(eq.abs() <= 1e-9);
                // Coefficients of the collapsed variables stay in [-C, C].
                for i in 0..n {
                    let theta = sol.beta[i] - sol.beta[n + i];
                    prop_assert!(theta.abs() <= c + 1e-12);
                }
            }
        }
    }
}
