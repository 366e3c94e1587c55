//! Selective diagonal state-space block.
//!
//! Per token `x_t` (width `d`), with latent state `h` (width `n`):
//!
//! ```text
//! Δ_t = softplus(w·x_t + b)
//! A_t = exp(Δ_t · â),   â = -exp(λ)
//! h_t = A_t ⊙ h_{t-1} + Δ_t · B x_t
//! y_t = C h_t + D x_t
//! o_t = x_t + tanh(y_t)
//! ```
//!
//! Parameters live in a flat buffer; [`BlockIndex`] records their offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offsets of one block's tensors inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndex {
    pub width: usize,
    pub state: usize,
    /// λ, length `n`.
    pub log_decay: usize,
    /// B, `n × d` row-major.
    pub b_in: usize,
    /// C, `d × n`.
    pub c_out: usize,
    /// D, `d × d`.
    pub d_skip: usize,
    /// w, length `d`.
    pub dt_w: usize,
    /// b, scalar.
    pub dt_b: usize,
}

impl BlockIndex {
    pub fn param_count(width: usize, state: usize) -> usize {
        state + 2 * state * width + width * width + width + 1
    }

    /// Lay out a block starting at `offset`.
    pub fn at(offset: usize, width: usize, state: usize) -> Self {
        let log_decay = offset;
        let b_in = log_decay + state;
        let c_out = b_in + state * width;
        let d_skip = c_out + width * state;
        let dt_w = d_skip + width * width;
        let dt_b = dt_w + width;
        Self {
            width,
            state,
            log_decay,
            b_in,
            c_out,
            d_skip,
            dt_w,
            dt_b,
        }
    }

    pub fn end(&self) -> usize {
        self.dt_b + 1
    }

    /// Named tensor groups as `(name, offset, len)`.
    pub fn groups(&self, prefix: &str) -> Vec<(String, usize, usize)> {
        let (d, n) = (self.width, self.state);
        vec![
            (format!("{prefix}.log_decay"), self.log_decay, n),
            (format!("{prefix}.b_in"), self.b_in, n * d),
            (format!("{prefix}.c_out"), self.c_out, d * n),
            (format!("{prefix}.d_skip"), self.d_skip, d * d),
            (format!("{prefix}.dt_w"), self.dt_w, d),
            (format!("{prefix}.dt_b"), self.dt_b, 1),
        ]
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &m[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += mᵀ · v`.
pub(crate) fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (r, &vr) in v.iter().enumerate().take(rows) {
        if vr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// `g += u · vᵀ` for a `len(u) × len(v)` gradient block.
pub(crate) fn outer_acc(g: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, &ur) in u.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        for (gi, vi) in g[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *gi += ur * vi;
        }
    }
}

/// One recurrence step: returns `(h_t, y_t)`.
pub fn ssm_step(params: &[f64], idx: &BlockIndex, h_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, n) = (idx.width, idx.state);
    if x.len() != d || h_prev.len() != n || params.len() < idx.end() {
        return Err(Error::contract(format!(
            "ssm_step dimensions: x {} (want {d}), h {} (want {n}), params {} (want >= {})",
            x.len(),
            h_prev.len(),
            params.len(),
            idx.end()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("ssm_step input x[{i}] = {}", x[i]),
        });
    }
    if let Some(i) = h_prev.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("ssm_step state h[{i}] = {}", h_prev[i]),
        });
    }
    let z: f64 = params[idx.dt_w..idx.dt_w + d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + params[idx.dt_b];
    let delta = softplus(z);
    let mut u = vec![0.0; n];
    matvec(&params[idx.b_in..idx.b_in + n * d], n, d, x, &mut u);
    let h: Vec<f64> = (0..n)
        .map(|k| {
            let a_hat = -params[idx.log_decay + k].exp();
            (delta * a_hat).exp() * h_prev[k] + delta * u[k]
        })
        .collect();
    let mut y = vec![0.0; d];
    matvec(&params[idx.c_out..idx.c_out + d * n], d, n, &h, &mut y);
    let mut dx = vec![0.0; d];
    matvec(&params[idx.d_skip..idx.d_skip + d * d], d, d, x, &mut dx);
    y.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
    Ok((h, y))
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    x: Vec<Vec<f64>>,
    z: Vec<f64>,
    delta: Vec<f64>,
    decay: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    /// `h[0]` is the zero initial state.
    h: Vec<Vec<f64>>,
    tanh_y: Vec<Vec<f64>>,
}

/// Run the block over a token sequence from a zero state.
pub fn block_forward(params: &[f64], idx: &BlockIndex, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BlockCache) {
    let (d, n) = (idx.width, idx.state);
    let a_hat: Vec<f64> = (0..n).map(|k| -params[idx.log_decay + k].exp()).collect();
    let b_in = &params[idx.b_in..idx.b_in + n * d];
    let c_out = &params[idx.c_out..idx.c_out + d * n];
    let d_skip = &params[idx.d_skip..idx.d_skip + d * d];
    let dt_w = &params[idx.dt_w..idx.dt_w + d];
    let dt_b = params[idx.dt_b];

    let mut cache = BlockCache {
        h: vec![vec![0.0; n]],
        ..BlockCache::default()
    };
    let mut outs = Vec::with_capacity(xs.len());
    for x in xs {
        let z = dt_w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + dt_b;
        let delta = softplus(z);
        let decay: Vec<f64> = a_hat.iter().map(|a| (delta * a).exp()).collect();
        let mut u = vec![0.0; n];
        matvec(b_in, n, d, x, &mut u);
        let prev = cache.h.last().expect("initial state");
        let h: Vec<f64> = (0..n).map(|k| decay[k] * prev[k] + delta * u[k]).collect();
        let mut y = vec![0.0; d];
        matvec(c_out, d, n, &h, &mut y);
        let mut skip = vec![0.0; d];
        matvec(d_skip, d, d, x, &mut skip);
        let ty: Vec<f64> = y.iter().zip(&skip).map(|(a, b)| (a + b).tanh()).collect();
        outs.push(x.iter().zip(&ty).map(|(a, b)| a + b).collect());

        cache.x.push(x.clone());
        cache.z.push(z);
        cache.delta.push(delta);
        cache.decay.push(decay);
        cache.u.push(u);
        cache.h.push(h);
        cache.tanh_y.push(ty);
    }
    (outs, cache)
}

/// Backpropagate `d_out` (one gradient per output token) through the block.
/// Parameter gradients are accumulated into `grad`; input gradients are
/// returned.
pub fn block_backward(
    params: &[f64],
    idx: &BlockIndex,
    cache: &BlockCache,
    d_out: &[Vec<f64>],
    grad: &mut [f64],
) -> Vec<Vec<f64>> {
    let (d, n) = (idx.width, idx.state);
    let t_len = cache.x.len();
    let a_hat: Vec<f64> = (0..n).map(|k| -params[idx.log_decay + k].exp()).collect();
    let b_in = &params[idx.b_in..idx.b_in + n * d];
    let c_out = &params[idx.c_out..idx.c_out + d * n];
    let d_skip = &params[idx.d_skip..idx.d_skip + d * d];
    let dt_w = &params[idx.dt_w..idx.dt_w + d];

    let mut dx_all = vec![vec![0.0; d]; t_len];
    let mut gh = vec![0.0; n];
    let mut d_lambda = vec![0.0; n];
    for t in (0..t_len).rev() {
        let x = &cache.x[t];
        let h = &cache.h[t + 1];
        let h_prev = &cache.h[t];
        let decay = &cache.decay[t];
        let u = &cache.u[t];
        let delta = cache.delta[t];
        let dy: Vec<f64> = d_out[t]
            .iter()
            .zip(&cache.tanh_y[t])
            .map(|(g, ty)| g * (1.0 - ty * ty))
            .collect();

        let dx = &mut dx_all[t];
        dx.copy_from_slice(&d_out[t]);
        outer_acc(&mut grad[idx.c_out..idx.c_out + d * n], &dy, h);
        outer_acc(&mut grad[idx.d_skip..idx.d_skip + d * d], &dy, x);
        matvec_t_acc(d_skip, d, d, &dy, dx);
        matvec_t_acc(c_out, d, n, &dy, &mut gh);

        let mut d_delta = 0.0;
        for k in 0..n {
            let d_decay = gh[k] * h_prev[k];
            d_delta += d_decay * decay[k] * a_hat[k] + gh[k] * u[k];
            d_lambda[k] += d_decay * decay[k] * delta * a_hat[k];
        }
        let du: Vec<f64> = gh.iter().map(|g| g * delta).collect();
        outer_acc(&mut grad[idx.b_in..idx.b_in + n * d], &du, x);
        matvec_t_acc(b_in, n, d, &du, dx);

        let dz = d_delta * sigmoid(cache.z[t]);
        for j in 0..d {
            grad[idx.dt_w + j] += dz * x[j];
            dx[j] += dz * dt_w[j];
        }
        grad[idx.dt_b] += dz;

        gh.iter_mut().zip(decay).for_each(|(g, a)| *g *= a);
    }
    for k in 0..n {
        grad[idx.log_decay + k] += d_lambda[k];
    }
    dx_all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(d: usize, n: usize, seed: u64) -> (Vec<f64>, BlockIndex) {
        let idx = BlockIndex::at(0, d, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = (0..idx.end()).map(|_| rng.random_range(-0.5..0.5)).collect();
        (p, idx)
    }

    #[test]
    fn step_matches_hand_computation() {
        // d = 1, n = 1: Δ = softplus(0) = ln 2, A = exp(-ln 2) = 0.5
        let idx = BlockIndex::at(0, 1, 1);
        let mut p = vec![0.0; idx.end()];
        p[idx.b_in] = 1.0;
        p[idx.c_out] = 2.0;
        p[idx.d_skip] = 0.5;
        let (h, y) = ssm_step(&p, &idx, &[1.0], &[3.0]).unwrap();
        let ln2 = 2f64.ln();
        assert!((h[0] - (0.5 + ln2 * 3.0)).abs() < 1e-12);
        assert!((y[0] - (2.0 * h[0] + 1.5)).abs() < 1e-12);
    }

    fn half_decay_unit_gain() -> (Vec<f64>, BlockIndex) {
        // Δ = softplus(0) = ln 2, â = -1 → A = 0.5; B̂ = 1/ln 2 → B = 1.
        let idx = BlockIndex::at(0, 1, 1);
        let mut p = vec![0.0; idx.end()];
        p[idx.b_in] = 1.0 / 2f64.ln();
        p[idx.c_out] = 1.0;
        (p, idx)
    }

    #[test]
    fn hand_recurrence() {
        let (p, idx) = half_decay_unit_gain();
        let mut h = vec![0.0];
        let mut ys = vec![];
        for x in [1.0, 1.0] {
            let (h2, y) = ssm_step(&p, &idx, &h, &[x]).unwrap();
            h = h2;
            ys.push(y[0]);
        }
        assert!((ys[0] - 1.0).abs() < 1e-12 && (ys[1] - 1.5).abs() < 1e-12, "{ys:?}");
    }

    #[test]
    fn feedthrough_and_zero_cases() {
        let (mut p, idx) = random_block(3, 4, 9);
        let zero = vec![0.0; 4];
        let (_, y) = ssm_step(&p, &idx, &zero, &[0.0; 3]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        p[idx.b_in..idx.b_in + 12].fill(0.0);
        let x = [0.3, -1.0, 2.0];
        let (h, y) = ssm_step(&p, &idx, &zero, &x).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
        let mut dx = vec![0.0; 3];
        matvec(&p[idx.d_skip..idx.d_skip + 9], 3, 3, &x, &mut dx);
        for j in 0..3 {
            assert!((y[j] - dx[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_input_fails_fast() {
        let (p, idx) = half_decay_unit_gain();
        assert!(matches!(ssm_step(&p, &idx, &[0.0], &[f64::NAN]), Err(Error::NonFinite { .. })));
        assert!(ssm_step(&p, &idx, &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn homogeneous_update_superposes() {
        let (p, idx) = random_block(3, 4, 5);
        let h1 = [0.3, -0.2, 1.0, 0.5];
        let h2 = [-1.0, 0.7, 0.1, 2.0];
        let sum: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
        let x = [0.0; 3];
        let (a, _) = ssm_step(&p, &idx, &h1, &x).unwrap();
        let (b, _) = ssm_step(&p, &idx, &h2, &x).unwrap();
        let (c, _) = ssm_step(&p, &idx, &sum, &x).unwrap();
        for k in 0..4 {
            assert!((c[k] - a[k] - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn state_bounded_for_bounded_inputs() {
        let (p, idx) = random_block(4, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut h = vec![0.0; 6];
        let mut peak: f64 = 0.0;
        for _ in 0..100_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            h = ssm_step(&p, &idx, &h, &x).unwrap().0;
            peak = peak.max(h.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
        assert!(peak.is_finite() && peak < 100.0, "peak {peak}");
    }

    #[test]
    fn forward_agrees_with_step() {
        let (p, idx) = random_block(4, 3, 1);
        let xs: Vec<Vec<f64>> = (0..5).map(|t| (0..4).map(|j| (t * 4 + j) as f64 * 0.1 - 0.7).collect()).collect();
        let (outs, _) = block_forward(&p, &idx, &xs);
        let mut h = vec![0.0; 3];
        for (x, o) in xs.iter().zip(&outs) {
            let (h2, y) = ssm_step(&p, &idx, &h, x).unwrap();
            h = h2;
            for j in 0..4 {
                assert!((o[j] - (x[j] + y[j].tanh())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn state_decays_without_input() {
        // With B = 0 the state stays at zero; with a nonzero state and zero
        // input it shrinks monotonically because every A lies in (0, 1).
        let (mut p, idx) = random_block(3, 4, 2);
        let h0 = vec![1.0, -2.0, 0.5, 3.0];
        p[idx.b_in..idx.b_in + 12].fill(0.0);
        let (h1, _) = ssm_step(&p, &idx, &h0, &[0.0; 3]).unwrap();
        for k in 0..4 {
            assert!(h1[k].abs() < h0[k].abs());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (d, n) = (3, 2);
        let (p, idx) = random_block(d, n, 3);
        let xs: Vec<Vec<f64>> = (0..4).map(|t| (0..d).map(|j| ((t + 1) * (j + 2)) as f64 * 0.13 - 0.5).collect()).collect();
        let w: Vec<Vec<f64>> = (0..4).map(|t| (0..d).map(|j| (t as f64 - j as f64) * 0.3 + 0.1).collect()).collect();
        let loss = |p: &[f64], xs: &[Vec<f64>]| -> f64 {
            let (o, _) = block_forward(p, &idx, xs);
            o.iter().zip(&w).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum()
        };
        let (_, cache) = block_forward(&p, &idx, &xs);
        let mut grad = vec![0.0; p.len()];
        let dx = block_backward(&p, &idx, &cache, &w, &mut grad);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h;
            b[i] -= h;
            let num = (loss(&a, &xs) - loss(&b, &xs)) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-7, "param {i}: {num} vs {}", grad[i]);
        }
        for t in 0..xs.len() {
            for j in 0..d {
                let mut a = xs.clone();
                let mut b = xs.clone();
                a[t][j] += h;
                b[t][j] -= h;
                let num = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
                assert!((num - dx[t][j]).abs() < 1e-7);
            }
        }
    }
}
