//! Fully-connected regression network trained from scratch.
//!
//! The reference architecture maps a 1000-dimensional log-mel window to one
//! attenuation value through hidden layers of 200, 50 and 10 rectified units
//! and a linear output. Training minimizes mean squared error plus an L2
//! penalty on the weight matrices (biases are exempt), using mini-batch
//! gradient descent with per-parameter adaptive moments.
//!
//! The trainer is generic over the scalar type: experiments run in `f32` for
//! speed, while the finite-difference gradient check exercises the identical
//! code in `f64`.

use crate::error::{Error, Result};
use crate::mat::{gemm, Mat, Scalar};
use crate::randn::standard_normal;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Feed-forward network with rectified hidden layers and a linear output.
///
/// Weights are kept in two layouts: `w[l]` is `out x in` (canonical, used by
/// the backward pass and serialization) and `wt[l]` is its transpose (used by
/// the forward pass so every product runs through the same matrix kernel).
#[derive(Clone, Debug)]
pub struct DenseNet<T: Scalar> {
    sizes: Vec<usize>,
    w: Vec<Mat<T>>,
    wt: Vec<Mat<T>>,
    b: Vec<Vec<T>>,
}

/// Optimization settings for [`DenseNet::train`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Coefficient of the squared-weight penalty added to the loss.
    pub l2_factor: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            l2_factor: 1e-3,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l2_factor < 0.0 {
            return Err(Error::invalid("l2 factor must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    /// Mean squared error over the training data, one entry per epoch
    /// (running average across that epoch's batches, L2 term excluded).
    pub train_mse: Vec<f64>,
    /// Validation MSE per epoch; empty when no validation set was given.
    pub val_mse: Vec<f64>,
    /// Epoch whose parameters were kept (lowest validation MSE), when
    /// validation checkpointing was active.
    pub best_epoch: Option<usize>,
}

/// Adam moment buffers, one pair per parameter tensor.
struct Moments<T: Scalar> {
    mw: Vec<Mat<T>>,
    vw: Vec<Mat<T>>,
    mb: Vec<Vec<T>>,
    vb: Vec<Vec<T>>,
    step: u64,
}

/// Per-batch scratch: activations, gradients and a transpose buffer.
struct Workspace<T: Scalar> {
    batch: usize,
    /// `acts[0]` holds the batch input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Mat<T>>,
    /// `dacts[l]` holds gradients w.r.t. `acts[l]`.
    dacts: Vec<Mat<T>>,
    dw: Vec<Mat<T>>,
    db: Vec<Vec<T>>,
    /// Transposed layer-output gradient, sized for the widest layer.
    dzt: Mat<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(sizes: &[usize], batch: usize) -> Self {
        let widest = *sizes[1..].iter().max().unwrap();
        Workspace {
            batch,
            acts: sizes.iter().map(|&s| Mat::zeros(batch, s)).collect(),
            dacts: sizes.iter().map(|&s| Mat::zeros(batch, s)).collect(),
            dw: sizes
                .windows(2)
                .map(|p| Mat::zeros(p[1], p[0]))
                .collect(),
            db: sizes[1..].iter().map(|&s| vec![T::ZERO; s]).collect(),
            dzt: Mat::zeros(widest, batch),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> DenseNet<T> {
    /// Random initialization: zero-mean normal weights scaled by
    /// `sqrt(2 / fan_in)`, zero biases. Deterministic per seed.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("need at least an input and an output layer"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Vec::new();
        let mut wt = Vec::new();
        let mut b = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let m = Mat::from_fn(fan_out, fan_in, |_, _| {
                T::from_f64(scale * standard_normal(&mut rng))
            });
            let mut t = Mat::zeros(fan_in, fan_out);
            m.transpose_into(&mut t);
            w.push(m);
            wt.push(t);
            b.push(vec![T::ZERO; fan_out]);
        }
        Ok(DenseNet {
            sizes: layer_sizes.to_vec(),
            w,
            wt,
            b,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Canonical `out x in` weight matrix of layer `l`.
    pub fn weights(&self, l: usize) -> &Mat<T> {
        &self.w[l]
    }

    pub fn biases(&self, l: usize) -> &[T] {
        &self.b[l]
    }

    /// Overwrites one weight, keeping both layouts in sync.
    pub fn set_weight(&mut self, l: usize, out: usize, inp: usize, v: T) {
        self.w[l][(out, inp)] = v;
        self.wt[l][(inp, out)] = v;
    }

    pub fn set_bias(&mut self, l: usize, out: usize, v: T) {
        self.b[l][out] = v;
    }

    /// Sum of squared weights across all layers (the L2 penalty base).
    pub fn weight_norm_sq(&self) -> f64 {
        self.w
            .iter()
            .flat_map(|m| m.data())
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum()
    }

    /// Single-sample prediction via plain dot products over the canonical
    /// layout (an intentionally separate arithmetic path from the batched
    /// kernel; the two are cross-checked in tests).
    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() != self.sizes[0] {
            return Err(Error::invalid(format!(
                "input has {} features, the network expects {}",
                x.len(),
                self.sizes[0]
            )));
        }
        let mut cur: Vec<T> = x.to_vec();
        for l in 0..self.n_layers() {
            let last = l == self.n_layers() - 1;
            let mut next = vec![T::ZERO; self.sizes[l + 1]];
            for (o, out) in next.iter_mut().enumerate() {
                let z = crate::mat::dot(self.w[l].row(o), &cur) + self.b[l][o];
                *out = if last { z } else { z.max(T::ZERO) };
            }
            cur = next;
        }
        Ok(cur[0])
    }

    /// Forward pass over `ws.acts[0][..rows]`, filling the later activation
    /// buffers. Only the first `rows` rows of each buffer are meaningful.
    fn forward_ws(&self, ws: &mut Workspace<T>, rows: usize) {
        for l in 0..self.n_layers() {
            let last = l == self.n_layers() - 1;
            let (lo, hi) = ws.acts.split_at_mut(l + 1);
            let a_in = &lo[l];
            let a_out = &mut hi[0];
            for r in 0..rows {
                a_out.row_mut(r).copy_from_slice(&self.b[l]);
            }
            if rows == ws.batch {
                gemm(a_out, a_in, &self.wt[l]);
            } else {
                gemm_rows(a_out, a_in, &self.wt[l], rows);
            }
            if !last {
                for r in 0..rows {
                    for v in a_out.row_mut(r) {
                        *v = (*v).max(T::ZERO);
                    }
                }
            }
        }
    }

    /// Batched prediction. Internally chunks the input to bound scratch size.
    pub fn predict_batch(&self, x: &Mat<T>) -> Result<Vec<T>> {
        if x.cols() != self.sizes[0] {
            return Err(Error::invalid(format!(
                "input has {} features, the network expects {}",
                x.cols(),
                self.sizes[0]
            )));
        }
        if *self.sizes.last().unwrap() != 1 {
            return Err(Error::invalid("batched prediction expects a scalar output"));
        }
        let chunk = 256.min(x.rows().max(1));
        let mut ws = Workspace::new(&self.sizes, chunk);
        let mut out = Vec::with_capacity(x.rows());
        let mut r0 = 0;
        while r0 < x.rows() {
            let rows = chunk.min(x.rows() - r0);
            for r in 0..rows {
                ws.acts[0].row_mut(r).copy_from_slice(x.row(r0 + r));
            }
            self.forward_ws(&mut ws, rows);
            let last = ws.acts.last().unwrap();
            for r in 0..rows {
                out.push(last.row(r)[0]);
            }
            r0 += rows;
        }
        Ok(out)
    }

    /// Backward pass for the rows filled by the latest `forward_ws`; fills
    /// `ws.dw` / `ws.db` with the gradient of
    /// `mean_batch((pred - y)^2) + l2 * sum(w^2)`.
    fn backward_ws(&self, ws: &mut Workspace<T>, y: &[T], l2: f64, rows: usize) {
        let nl = self.n_layers();
        let inv = T::from_f64(1.0 / rows as f64);
        let two = T::from_f64(2.0);
        {
            let preds = ws.acts.last().unwrap();
            let dlast = ws.dacts.last_mut().unwrap();
            for r in 0..rows {
                dlast.row_mut(r)[0] = two * inv * (preds.row(r)[0] - y[r]);
            }
        }
        for l in (0..nl).rev() {
            let last = l == nl - 1;
            // dz lives in dacts[l + 1]; apply the rectifier mask in place.
            if !last {
                for r in 0..rows {
                    let a = ws.acts[l + 1].row(r);
                    let d = ws.dacts[l + 1].row_mut(r);
                    for (dv, av) in d.iter_mut().zip(a) {
                        if !(*av > T::ZERO) {
                            *dv = T::ZERO;
                        }
                    }
                }
            }
            let out_dim = self.sizes[l + 1];

            // Bias gradient: column sums of dz.
            let db = &mut ws.db[l];
            db.fill(T::ZERO);
            for r in 0..rows {
                for (g, d) in db.iter_mut().zip(ws.dacts[l + 1].row(r)) {
                    *g = *g + *d;
                }
            }

            // Weight gradient: dz^T (out x rows) times input acts (rows x in).
            ws.dw[l].fill(T::ZERO);
            for r in 0..rows {
                let d = ws.dacts[l + 1].row(r);
                for (o, dv) in d.iter().enumerate() {
                    ws.dzt[(o, r)] = *dv;
                }
            }
            // Zero stale columns beyond `rows` so the full-width product is safe.
            if rows < ws.batch {
                for o in 0..out_dim {
                    for c in rows..ws.batch {
                        ws.dzt[(o, c)] = T::ZERO;
                    }
                }
            }
            gemm_ab_sub(&mut ws.dw[l], &ws.dzt, &ws.acts[l], out_dim, ws.batch);
            if l2 > 0.0 {
                let two_l2 = T::from_f64(2.0 * l2);
                for (g, w) in ws.dw[l].data_mut().iter_mut().zip(self.w[l].data()) {
                    *g = two_l2.mul_add(*w, *g);
                }
            }

            if l > 0 {
                ws.dacts[l].fill(T::ZERO);
                if rows == ws.batch {
                    let (lo, hi) = ws.dacts.split_at_mut(l + 1);
                    gemm(&mut lo[l], &hi[0], &self.w[l]);
                } else {
                    let (lo, hi) = ws.dacts.split_at_mut(l + 1);
                    gemm_rows(&mut lo[l], &hi[0], &self.w[l], rows);
                }
            }
        }
    }

    fn adam_step(&mut self, ws: &Workspace<T>, mom: &mut Moments<T>, lr: f64) {
        mom.step += 1;
        let c1 = 1.0 / (1.0 - ADAM_BETA1.powi(mom.step as i32));
        let c2 = 1.0 / (1.0 - ADAM_BETA2.powi(mom.step as i32));
        let b1 = T::from_f64(ADAM_BETA1);
        let b1c = T::from_f64(1.0 - ADAM_BETA1);
        let b2 = T::from_f64(ADAM_BETA2);
        let b2c = T::from_f64(1.0 - ADAM_BETA2);
        let eps = T::from_f64(ADAM_EPS);
        let step = T::from_f64(lr * c1);
        let vc = T::from_f64(c2);

        for l in 0..self.n_layers() {
            let g = ws.dw[l].data();
            let m = mom.mw[l].data_mut();
            let v = mom.vw[l].data_mut();
            let w = self.w[l].data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + b1c * g[i];
                v[i] = b2 * v[i] + b2c * g[i] * g[i];
                w[i] = w[i] - step * m[i] / ((vc * v[i]).sqrt() + eps);
            }
            self.w[l].transpose_into(&mut self.wt[l]);

            let g = &ws.db[l];
            let m = &mut mom.mb[l];
            let v = &mut mom.vb[l];
            let b = &mut self.b[l];
            for i in 0..b.len() {
                m[i] = b1 * m[i] + b1c * g[i];
                v[i] = b2 * v[i] + b2c * g[i] * g[i];
                b[i] = b[i] - step * m[i] / ((vc * v[i]).sqrt() + eps);
            }
        }
    }

    /// Trains on `(x, y)` with a seed-derived shuffle each epoch. When a
    /// validation set is given, the parameters from the epoch with the lowest
    /// validation MSE are restored at the end (checkpointing).
    pub fn train(
        &mut self,
        x: &Mat<T>,
        y: &[T],
        val: Option<(&Mat<T>, &[T])>,
        cfg: &TrainConfig,
    ) -> Result<TrainLog> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        self.train_impl(x, y, val, cfg, |epoch_order| {
            for (i, o) in epoch_order.iter_mut().enumerate() {
                *o = i;
            }
            epoch_order.shuffle(&mut rng);
        })
    }

    /// Trains with explicit per-epoch visit orders (each a permutation of the
    /// row indices). The result depends only on the visited sample sequence,
    /// not on storage order, which this entry point makes testable.
    pub fn train_with_orders(
        &mut self,
        x: &Mat<T>,
        y: &[T],
        val: Option<(&Mat<T>, &[T])>,
        orders: &[Vec<usize>],
        cfg: &TrainConfig,
    ) -> Result<TrainLog> {
        if orders.len() != cfg.epochs {
            return Err(Error::invalid("need one visit order per epoch"));
        }
        for o in orders {
            if o.len() != x.rows() || o.iter().any(|&i| i >= x.rows()) {
                return Err(Error::invalid("visit order is not a permutation of the rows"));
            }
        }
        let mut it = orders.iter();
        self.train_impl(x, y, val, cfg, |epoch_order| {
            epoch_order.copy_from_slice(it.next().unwrap());
        })
    }

    fn train_impl(
        &mut self,
        x: &Mat<T>,
        y: &[T],
        val: Option<(&Mat<T>, &[T])>,
        cfg: &TrainConfig,
        mut next_order: impl FnMut(&mut [usize]),
    ) -> Result<TrainLog> {
        cfg.validate()?;
        let n = x.rows();
        if n == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        if y.len() != n {
            return Err(Error::invalid("feature and target counts differ"));
        }
        if x.cols() != self.sizes[0] {
            return Err(Error::invalid(format!(
                "training features have {} columns, the network expects {}",
                x.cols(),
                self.sizes[0]
            )));
        }
        if *self.sizes.last().unwrap() != 1 {
            return Err(Error::invalid("the trainer expects a scalar output layer"));
        }
        if let Some((vx, vy)) = val {
            if vx.rows() == 0 || vx.rows() != vy.len() || vx.cols() != self.sizes[0] {
                return Err(Error::invalid("validation set shape mismatch"));
            }
        }

        let bs = cfg.batch_size.min(n);
        let mut ws = Workspace::new(&self.sizes, bs);
        let mut mom = Moments {
            mw: self.w.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
            vw: self.w.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
            mb: self.b.iter().map(|b| vec![T::ZERO; b.len()]).collect(),
            vb: self.b.iter().map(|b| vec![T::ZERO; b.len()]).collect(),
            step: 0,
        };
        let mut log = TrainLog::default();
        let mut order = vec![0usize; n];
        let mut ybuf = vec![T::ZERO; bs];
        let mut best: Option<(f64, usize, Vec<Mat<T>>, Vec<Vec<T>>)> = None;

        for epoch in 0..cfg.epochs {
            next_order(&mut order);
            let mut sq_err = 0.0;
            let mut seen = 0usize;
            let mut at = 0usize;
            while at < n {
                let rows = bs.min(n - at);
                for r in 0..rows {
                    let src = order[at + r];
                    ws.acts[0].row_mut(r).copy_from_slice(x.row(src));
                    ybuf[r] = y[src];
                }
                self.forward_ws(&mut ws, rows);
                {
                    let preds = ws.acts.last().unwrap();
                    for r in 0..rows {
                        let e = (preds.row(r)[0] - ybuf[r]).to_f64();
                        sq_err += e * e;
                    }
                }
                self.backward_ws(&mut ws, &ybuf, cfg.l2_factor, rows);
                self.adam_step(&ws, &mut mom, cfg.learning_rate);
                seen += rows;
                at += rows;
            }
            log.train_mse.push(sq_err / seen as f64);

            if let Some((vx, vy)) = val {
                let mse = self.mse_on(vx, vy)?;
                log.val_mse.push(mse);
                let better = best.as_ref().map_or(true, |(b, _, _, _)| mse < *b);
                if better {
                    best = Some((mse, epoch, self.w.clone(), self.b.clone()));
                }
            }
        }

        if let Some((_, epoch, w, b)) = best {
            self.w = w;
            self.b = b;
            for l in 0..self.n_layers() {
                self.w[l].transpose_into(&mut self.wt[l]);
            }
            log.best_epoch = Some(epoch);
        }
        Ok(log)
    }

    /// Mean squared error of the current parameters on a dataset.
    pub fn mse_on(&self, x: &Mat<T>, y: &[T]) -> Result<f64> {
        if x.rows() != y.len() {
            return Err(Error::invalid("feature and target counts differ"));
        }
        let preds = self.predict_batch(x)?;
        let mut s = 0.0;
        for (p, t) in preds.iter().zip(y) {
            let e = (*p - *t).to_f64();
            s += e * e;
        }
        Ok(s / y.len().max(1) as f64)
    }

    /// Regularized single-sample loss, `(f(x) - y)^2 + l2 * sum(w^2)`.
    /// Single-sample loss plus a hash of the ReLU activation pattern it
    /// passed through.
    fn loss_one(&self, x: &[T], y: T, l2: f64) -> (f64, u64) {
        let mut pattern = 0xcbf2_9ce4_8422_2325u64;
        let mut cur: Vec<T> = x.to_vec();
        for l in 0..self.n_layers() {
            let last = l == self.n_layers() - 1;
            let mut next = vec![T::ZERO; self.sizes[l + 1]];
            for (o, out) in next.iter_mut().enumerate() {
                let z = crate::mat::dot(self.w[l].row(o), &cur) + self.b[l][o];
                if last {
                    *out = z;
                } else {
                    let active = z > T::ZERO;
                    pattern = (pattern ^ active as u64).wrapping_mul(0x100_0000_01b3);
                    *out = if active { z } else { T::ZERO };
                }
            }
            cur = next;
        }
        let e = (cur[0] - y).to_f64();
        (e * e + l2 * self.weight_norm_sq(), pattern)
    }

    /// Compares backpropagated gradients against central finite differences
    /// on `n_samples` randomly chosen parameters; returns the largest
    /// relative error. Deterministic per seed.
    ///
    /// Probes whose two perturbed evaluations cross a ReLU kink (their
    /// activation patterns differ) are skipped: a centered difference across
    /// the kink estimates the average of two one-sided slopes, not the
    /// subgradient the backward pass reports.
    pub fn gradient_check(
        &mut self,
        x: &[T],
        y: T,
        l2: f64,
        h: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<f64> {
        if x.len() != self.sizes[0] {
            return Err(Error::invalid("input length mismatch"));
        }
        // Analytic gradient from a single-row batch.
        let mut ws = Workspace::new(&self.sizes, 1);
        ws.acts[0].row_mut(0).copy_from_slice(x);
        self.forward_ws(&mut ws, 1);
        self.backward_ws(&mut ws, &[y], l2, 1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..n_samples {
            let l = rng.random_range(0..self.n_layers());
            let is_bias = rng.random_range(0..10) == 0;
            let (analytic, fd, crossed) = if is_bias {
                let o = rng.random_range(0..self.b[l].len());
                let orig = self.b[l][o];
                self.b[l][o] = orig + T::from_f64(h);
                let (lp, pp) = self.loss_one(x, y, l2);
                self.b[l][o] = orig - T::from_f64(h);
                let (lm, pm) = self.loss_one(x, y, l2);
                self.b[l][o] = orig;
                (ws.db[l][o].to_f64(), (lp - lm) / (2.0 * h), pp != pm)
            } else {
                let o = rng.random_range(0..self.w[l].rows());
                let i = rng.random_range(0..self.w[l].cols());
                let orig = self.w[l][(o, i)];
                self.set_weight(l, o, i, orig + T::from_f64(h));
                let (lp, pp) = self.loss_one(x, y, l2);
                self.set_weight(l, o, i, orig - T::from_f64(h));
                let (lm, pm) = self.loss_one(x, y, l2);
                self.set_weight(l, o, i, orig);
                (ws.dw[l][(o, i)].to_f64(), (lp - lm) / (2.0 * h), pp != pm)
            };
            if crossed {
                continue;
            }
            if analytic.abs() < 1e-12 && fd.abs() < 1e-12 {
                continue;
            }
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    /// Writes the model as a line-oriented text file: a header, the layer
    /// sizes, then per layer the bias vector and the `out x in` weight rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            writeln!(out, "densenet 1")?;
            write!(out, "sizes")?;
            for s in &self.sizes {
                write!(out, " {s}")?;
            }
            writeln!(out)?;
            for l in 0..self.n_layers() {
                write!(out, "bias {l}")?;
                for v in &self.b[l] {
                    write!(out, " {v}")?;
                }
                writeln!(out)?;
                writeln!(out, "weight {l}")?;
                for o in 0..self.w[l].rows() {
                    let row = self.w[l].row(o);
                    for (i, v) in row.iter().enumerate() {
                        if i > 0 {
                            write!(out, " ")?;
                        }
                        write!(out, "{v}")?;
                    }
                    writeln!(out)?;
                }
            }
            out.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut lineno = 0usize;
        let mut next = |what: &str| -> Result<String> {
            lineno += 1;
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::io(path, e)),
                None => Err(Error::parse(path, format!("line {lineno}"), format!("missing {what}"))),
            }
        };

        let header = next("header")?;
        if header.trim() != "densenet 1" {
            return Err(Error::parse(path, "line 1", "unrecognized model header"));
        }
        let sizes_line = next("layer sizes")?;
        let mut parts = sizes_line.split_whitespace();
        if parts.next() != Some("sizes") {
            return Err(Error::parse(path, "line 2", "expected a sizes line"));
        }
        let sizes: Vec<usize> = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, "line 2", format!("bad layer size: {e}")))?;
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::parse(path, "line 2", "invalid layer sizes"));
        }

        let parse_floats = |line: &str, skip: usize, want: usize, loc: String| -> Result<Vec<T>> {
            let vals: Vec<T> = line
                .split_whitespace()
                .skip(skip)
                .map(|p| p.parse::<f64>().map(T::from_f64))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, loc.clone(), format!("bad number: {e}")))?;
            if vals.len() != want {
                return Err(Error::parse(
                    path,
                    loc,
                    format!("expected {want} values, found {}", vals.len()),
                ));
            }
            Ok(vals)
        };

        let mut w = Vec::new();
        let mut wt = Vec::new();
        let mut b = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bias_line = next("bias line")?;
            if !bias_line.starts_with(&format!("bias {l}")) {
                return Err(Error::parse(path, format!("layer {l}"), "expected a bias line"));
            }
            b.push(parse_floats(&bias_line, 2, fan_out, format!("layer {l} bias"))?);
            let wh = next("weight header")?;
            if wh.trim() != format!("weight {l}") {
                return Err(Error::parse(path, format!("layer {l}"), "expected a weight header"));
            }
            let mut m = Mat::zeros(fan_out, fan_in);
            for o in 0..fan_out {
                let row_line = next("weight row")?;
                let vals = parse_floats(&row_line, 0, fan_in, format!("layer {l} row {o}"))?;
                m.row_mut(o).copy_from_slice(&vals);
            }
            let mut t = Mat::zeros(fan_in, fan_out);
            m.transpose_into(&mut t);
            w.push(m);
            wt.push(t);
        }
        Ok(DenseNet { sizes, w, wt, b })
    }
}

/// `c += a[..rows] * b` where only the first `rows` rows of `a` are valid.
fn gemm_rows<T: Scalar>(c: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>, rows: usize) {
    for r in 0..rows {
        let ar = a.row(r);
        let cr = c.row_mut(r);
        for (k, &av) in ar.iter().enumerate() {
            if av != T::ZERO {
                crate::mat::axpy(av, b.row(k), cr);
            }
        }
    }
}

/// `c += dzt[..out_dim, ..] * acts`, where dzt columns beyond the live batch
/// are already zero. Operates on the leading `out_dim` rows of `dzt`.
fn gemm_ab_sub<T: Scalar>(c: &mut Mat<T>, dzt: &Mat<T>, acts: &Mat<T>, out_dim: usize, k: usize) {
    debug_assert_eq!(acts.rows(), k);
    for o in 0..out_dim {
        let dz = &dzt.row(o)[..k];
        let cr = c.row_mut(o);
        for (r, &d) in dz.iter().enumerate() {
            if d != T::ZERO {
                crate::mat::axpy(d, acts.row(r), cr);
            }
        }
    }
}
