//! The LSTM cell, sequence forward/backward passes, and the stacked
//! two-layer encoder.
//!
//! The cell follows the bias-free recurrences
//!
//! ```text
//! i = σ(W_xi x + W_hi h)        f = σ(W_xf x + W_hf h)
//! o = σ(W_xo x + W_ho h)        c' = f⊙c + i⊙tanh(W_xc x + W_hc h)
//! h' = o⊙tanh(c')
//! ```
//!
//! with an optional bias switch (off by default) for parity experiments.
//! Training-time dropout on inputs and recurrent connections uses one
//! mask per sequence (the same mask at every timestep), which is what the
//! sequence models that popularized the technique do.

use crate::matrix::Matrix;
use crate::rng::SplitMix64;

use super::{dropout_mask, NeuralError, INIT_RANGE};

/// Gate and candidate weights for one LSTM layer. Input-to-hidden
/// matrices are hidden×input; hidden-to-hidden are hidden×hidden.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_hi: Matrix,
    pub w_xf: Matrix,
    pub w_hf: Matrix,
    pub w_xo: Matrix,
    pub w_ho: Matrix,
    pub w_xc: Matrix,
    pub w_hc: Matrix,
    /// Gate biases; `None` matches the bias-free recurrences above.
    pub biases: Option<LstmBiases>,
}

/// Optional per-gate biases, each stored 1×hidden.
#[derive(Debug, Clone)]
pub struct LstmBiases {
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_c: Matrix,
}

/// Hidden and memory-cell state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmParams {
    pub fn new(input: usize, hidden: usize, use_bias: bool, rng: &mut SplitMix64) -> Self {
        let w = |r: usize, c: usize, rng: &mut SplitMix64| {
            Matrix::random_uniform(r, c, -INIT_RANGE, INIT_RANGE, rng)
        };
        Self {
            w_xi: w(hidden, input, rng),
            w_hi: w(hidden, hidden, rng),
            w_xf: w(hidden, input, rng),
            w_hf: w(hidden, hidden, rng),
            w_xo: w(hidden, input, rng),
            w_ho: w(hidden, hidden, rng),
            w_xc: w(hidden, input, rng),
            w_hc: w(hidden, hidden, rng),
            biases: use_bias.then(|| LstmBiases {
                b_i: Matrix::zeros(1, hidden),
                b_f: Matrix::zeros(1, hidden),
                b_o: Matrix::zeros(1, hidden),
                b_c: Matrix::zeros(1, hidden),
            }),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            w_xi: z(&self.w_xi),
            w_hi: z(&self.w_hi),
            w_xf: z(&self.w_xf),
            w_hf: z(&self.w_hf),
            w_xo: z(&self.w_xo),
            w_ho: z(&self.w_ho),
            w_xc: z(&self.w_xc),
            w_hc: z(&self.w_hc),
            biases: self.biases.as_ref().map(|b| LstmBiases {
                b_i: z(&b.b_i),
                b_f: z(&b.b_f),
                b_o: z(&b.b_o),
                b_c: z(&b.b_c),
            }),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xi.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_xi.cols()
    }

    /// Visits this layer's tensors under `prefix`.
    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f(&format!("{prefix}.w_xi"), &mut self.w_xi);
        f(&format!("{prefix}.w_hi"), &mut self.w_hi);
        f(&format!("{prefix}.w_xf"), &mut self.w_xf);
        f(&format!("{prefix}.w_hf"), &mut self.w_hf);
        f(&format!("{prefix}.w_xo"), &mut self.w_xo);
        f(&format!("{prefix}.w_ho"), &mut self.w_ho);
        f(&format!("{prefix}.w_xc"), &mut self.w_xc);
        f(&format!("{prefix}.w_hc"), &mut self.w_hc);
        if let Some(b) = self.biases.as_mut() {
            f(&format!("{prefix}.b_i"), &mut b.b_i);
            f(&format!("{prefix}.b_f"), &mut b.b_f);
            f(&format!("{prefix}.b_o"), &mut b.b_o);
            f(&format!("{prefix}.b_c"), &mut b.b_c);
        }
    }

    fn check_shapes(&self, x_len: usize, state: &LstmState) -> Result<(), NeuralError> {
        let hidden = self.hidden_size();
        let input = self.input_size();
        let consistent = [&self.w_xi, &self.w_xf, &self.w_xo, &self.w_xc]
            .iter()
            .all(|m| m.rows() == hidden && m.cols() == input)
            && [&self.w_hi, &self.w_hf, &self.w_ho, &self.w_hc]
                .iter()
                .all(|m| m.rows() == hidden && m.cols() == hidden);
        if !consistent || x_len != input || state.h.len() != hidden || state.c.len() != hidden {
            return Err(NeuralError::ShapeMismatch {
                place: "lstm step",
                expected: format!("input {input}, hidden {hidden}"),
                found: format!(
                    "x {}, h {}, c {}",
                    x_len,
                    state.h.len(),
                    state.c.len()
                ),
            });
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pre-scaled dropout masks applied at every step of one sequence: one
/// mask for the input vector, one for the recurrent hidden vector.
#[derive(Debug, Clone)]
pub struct SequenceDropout {
    pub x_mask: Vec<f64>,
    pub h_mask: Vec<f64>,
}

impl SequenceDropout {
    /// Draws input and recurrent masks for one sequence.
    pub fn draw(input: usize, hidden: usize, p: f64, rng: &mut SplitMix64) -> Self {
        Self {
            x_mask: dropout_mask(input, p, rng),
            h_mask: dropout_mask(hidden, p, rng),
        }
    }
}

struct GateValues {
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn step_full(p: &LstmParams, x: &[f64], state: &LstmState) -> GateValues {
    let hidden = p.hidden_size();
    let mut pre_i = p.w_xi.matvec(x);
    let mut pre_f = p.w_xf.matvec(x);
    let mut pre_o = p.w_xo.matvec(x);
    let mut pre_g = p.w_xc.matvec(x);
    let rec_i = p.w_hi.matvec(&state.h);
    let rec_f = p.w_hf.matvec(&state.h);
    let rec_o = p.w_ho.matvec(&state.h);
    let rec_g = p.w_hc.matvec(&state.h);
    for j in 0..hidden {
        pre_i[j] += rec_i[j];
        pre_f[j] += rec_f[j];
        pre_o[j] += rec_o[j];
        pre_g[j] += rec_g[j];
        if let Some(b) = &p.biases {
            pre_i[j] += b.b_i.as_slice()[j];
            pre_f[j] += b.b_f.as_slice()[j];
            pre_o[j] += b.b_o.as_slice()[j];
            pre_g[j] += b.b_c.as_slice()[j];
        }
    }
    let i: Vec<f64> = pre_i.iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = pre_f.iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = pre_o.iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = pre_g.iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..hidden)
        .map(|j| f[j] * state.c[j] + i[j] * g[j])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hidden).map(|j| o[j] * tanh_c[j]).collect();
    GateValues {
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h,
    }
}

/// One step of the recurrences. Every component of the returned `h`
/// satisfies |h_j| ≤ 1.
pub fn lstm_step(p: &LstmParams, x: &[f64], state: &LstmState) -> Result<LstmState, NeuralError> {
    p.check_shapes(x.len(), state)?;
    let gv = step_full(p, x, state);
    Ok(LstmState { h: gv.h, c: gv.c })
}

/// Everything the backward pass needs from one layer's forward pass.
pub struct LstmCache {
    x_masked: Matrix,
    h_prev_masked: Matrix,
    c_prev: Matrix,
    i: Matrix,
    f: Matrix,
    o: Matrix,
    g: Matrix,
    tanh_c: Matrix,
    x_mask: Option<Vec<f64>>,
    h_mask: Option<Vec<f64>>,
}

impl LstmParams {
    /// Runs the layer over a T×input sequence from zero state, returning
    /// the T×hidden sequence of hidden states plus the backward cache.
    pub fn forward_sequence(
        &self,
        inputs: &Matrix,
        drop: Option<&SequenceDropout>,
    ) -> Result<(Matrix, LstmCache), NeuralError> {
        let t_len = inputs.rows();
        if t_len == 0 {
            return Err(NeuralError::EmptySequence);
        }
        let hidden = self.hidden_size();
        let input = self.input_size();
        if inputs.cols() != input {
            return Err(NeuralError::ShapeMismatch {
                place: "lstm sequence",
                expected: format!("{input} input columns"),
                found: format!("{}", inputs.cols()),
            });
        }
        if let Some(d) = drop {
            if d.x_mask.len() != input || d.h_mask.len() != hidden {
                return Err(NeuralError::ShapeMismatch {
                    place: "sequence dropout",
                    expected: format!("x mask {input}, h mask {hidden}"),
                    found: format!("x mask {}, h mask {}", d.x_mask.len(), d.h_mask.len()),
                });
            }
        }
        let mut cache = LstmCache {
            x_masked: Matrix::zeros(t_len, input),
            h_prev_masked: Matrix::zeros(t_len, hidden),
            c_prev: Matrix::zeros(t_len, hidden),
            i: Matrix::zeros(t_len, hidden),
            f: Matrix::zeros(t_len, hidden),
            o: Matrix::zeros(t_len, hidden),
            g: Matrix::zeros(t_len, hidden),
            tanh_c: Matrix::zeros(t_len, hidden),
            x_mask: drop.map(|d| d.x_mask.clone()),
            h_mask: drop.map(|d| d.h_mask.clone()),
        };
        let mut outputs = Matrix::zeros(t_len, hidden);
        let mut state = LstmState::zeros(hidden);
        for t in 0..t_len {
            let x_masked: Vec<f64> = match drop {
                Some(d) => inputs
                    .row(t)
                    .iter()
                    .zip(&d.x_mask)
                    .map(|(x, m)| x * m)
                    .collect(),
                None => inputs.row(t).to_vec(),
            };
            let h_masked: Vec<f64> = match drop {
                Some(d) => state.h.iter().zip(&d.h_mask).map(|(h, m)| h * m).collect(),
                None => state.h.clone(),
            };
            let gated_state = LstmState {
                h: h_masked.clone(),
                c: state.c.clone(),
            };
            self.check_shapes(x_masked.len(), &gated_state)?;
            let gv = step_full(self, &x_masked, &gated_state);
            cache.x_masked.row_mut(t).copy_from_slice(&x_masked);
            cache.h_prev_masked.row_mut(t).copy_from_slice(&h_masked);
            cache.c_prev.row_mut(t).copy_from_slice(&state.c);
            cache.i.row_mut(t).copy_from_slice(&gv.i);
            cache.f.row_mut(t).copy_from_slice(&gv.f);
            cache.o.row_mut(t).copy_from_slice(&gv.o);
            cache.g.row_mut(t).copy_from_slice(&gv.g);
            cache.tanh_c.row_mut(t).copy_from_slice(&gv.tanh_c);
            outputs.row_mut(t).copy_from_slice(&gv.h);
            state = LstmState { h: gv.h, c: gv.c };
        }
        Ok((outputs, cache))
    }

    /// Backpropagation through time. `dh_inject` holds the loss gradient
    /// arriving at each step's hidden output (T×hidden); gradients
    /// accumulate into `grads` and the gradient with respect to the true
    /// (pre-dropout) inputs is returned (T×input).
    pub fn backward_sequence(
        &self,
        cache: &LstmCache,
        dh_inject: &Matrix,
        grads: &mut LstmParams,
    ) -> Matrix {
        let t_len = cache.i.rows();
        let hidden = self.hidden_size();
        let input = self.input_size();
        assert_eq!(dh_inject.rows(), t_len, "dh rows");
        assert_eq!(dh_inject.cols(), hidden, "dh cols");
        let mut dx_all = Matrix::zeros(t_len, input);
        let mut dh_rec = vec![0.0; hidden];
        let mut dc_rec = vec![0.0; hidden];
        for t in (0..t_len).rev() {
            let i = cache.i.row(t);
            let f = cache.f.row(t);
            let o = cache.o.row(t);
            let g = cache.g.row(t);
            let tanh_c = cache.tanh_c.row(t);
            let c_prev = cache.c_prev.row(t);

            let mut da_i = vec![0.0; hidden];
            let mut da_f = vec![0.0; hidden];
            let mut da_o = vec![0.0; hidden];
            let mut da_g = vec![0.0; hidden];
            let mut dc = vec![0.0; hidden];
            for j in 0..hidden {
                let dh = dh_inject.get(t, j) + dh_rec[j];
                let do_ = dh * tanh_c[j];
                da_o[j] = do_ * o[j] * (1.0 - o[j]);
                dc[j] = dh * o[j] * (1.0 - tanh_c[j] * tanh_c[j]) + dc_rec[j];
                let di = dc[j] * g[j];
                da_i[j] = di * i[j] * (1.0 - i[j]);
                let df = dc[j] * c_prev[j];
                da_f[j] = df * f[j] * (1.0 - f[j]);
                let dg = dc[j] * i[j];
                da_g[j] = dg * (1.0 - g[j] * g[j]);
            }

            let x = cache.x_masked.row(t);
            let h_prev = cache.h_prev_masked.row(t);
            grads.w_xi.add_outer(&da_i, x, 1.0);
            grads.w_hi.add_outer(&da_i, h_prev, 1.0);
            grads.w_xf.add_outer(&da_f, x, 1.0);
            grads.w_hf.add_outer(&da_f, h_prev, 1.0);
            grads.w_xo.add_outer(&da_o, x, 1.0);
            grads.w_ho.add_outer(&da_o, h_prev, 1.0);
            grads.w_xc.add_outer(&da_g, x, 1.0);
            grads.w_hc.add_outer(&da_g, h_prev, 1.0);
            if let Some(gb) = grads.biases.as_mut() {
                for j in 0..hidden {
                    gb.b_i.as_mut_slice()[j] += da_i[j];
                    gb.b_f.as_mut_slice()[j] += da_f[j];
                    gb.b_o.as_mut_slice()[j] += da_o[j];
                    gb.b_c.as_mut_slice()[j] += da_g[j];
                }
            }

            let mut dx = self.w_xi.matvec_t(&da_i);
            for (dst, src) in dx.iter_mut().zip(self.w_xf.matvec_t(&da_f)) {
                *dst += src;
            }
            for (dst, src) in dx.iter_mut().zip(self.w_xo.matvec_t(&da_o)) {
                *dst += src;
            }
            for (dst, src) in dx.iter_mut().zip(self.w_xc.matvec_t(&da_g)) {
                *dst += src;
            }
            if let Some(mask) = &cache.x_mask {
                for (d, m) in dx.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            dx_all.row_mut(t).copy_from_slice(&dx);

            let mut dh_prev = self.w_hi.matvec_t(&da_i);
            for (dst, src) in dh_prev.iter_mut().zip(self.w_hf.matvec_t(&da_f)) {
                *dst += src;
            }
            for (dst, src) in dh_prev.iter_mut().zip(self.w_ho.matvec_t(&da_o)) {
                *dst += src;
            }
            for (dst, src) in dh_prev.iter_mut().zip(self.w_hc.matvec_t(&da_g)) {
                *dst += src;
            }
            if let Some(mask) = &cache.h_mask {
                for (d, m) in dh_prev.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            dh_rec = dh_prev;
            for j in 0..hidden {
                dc_rec[j] = dc[j] * f[j];
            }
        }
        dx_all
    }
}

/// Two stacked LSTM layers; layer 2 consumes layer 1's hidden sequence
/// and its final hidden state is the sequence embedding.
#[derive(Debug, Clone)]
pub struct LstmEncoder {
    pub layer1: LstmParams,
    pub layer2: LstmParams,
}

/// Forward caches for both layers of one encoder pass.
pub struct EncoderCache {
    cache1: LstmCache,
    cache2: LstmCache,
    t_len: usize,
}

impl LstmEncoder {
    pub fn new(input: usize, hidden: usize, use_bias: bool, rng: &mut SplitMix64) -> Self {
        Self {
            layer1: LstmParams::new(input, hidden, use_bias, rng),
            layer2: LstmParams::new(hidden, hidden, use_bias, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer1: self.layer1.zeros_like(),
            layer2: self.layer2.zeros_like(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.layer2.hidden_size()
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.layer1.visit(&format!("{prefix}.l1"), f);
        self.layer2.visit(&format!("{prefix}.l2"), f);
    }

    /// Embeds a T×input sequence into the final hidden state of layer 2.
    pub fn encode(&self, inputs: &Matrix) -> Result<(Vec<f64>, EncoderCache), NeuralError> {
        let (seq1, cache1) = self.layer1.forward_sequence(inputs, None)?;
        let (seq2, cache2) = self.layer2.forward_sequence(&seq1, None)?;
        let t_len = inputs.rows();
        let h = seq2.row(t_len - 1).to_vec();
        Ok((
            h,
            EncoderCache {
                cache1,
                cache2,
                t_len,
            },
        ))
    }

    /// Backpropagates a gradient on the final embedding through both
    /// layers, accumulating into `grads`.
    pub fn backward(&self, cache: &EncoderCache, d_final: &[f64], grads: &mut LstmEncoder) {
        let hidden = self.hidden_size();
        let mut dh2 = Matrix::zeros(cache.t_len, hidden);
        dh2.row_mut(cache.t_len - 1).copy_from_slice(d_final);
        let dseq1 = self
            .layer2
            .backward_sequence(&cache.cache2, &dh2, &mut grads.layer2);
        self.layer1
            .backward_sequence(&cache.cache1, &dseq1, &mut grads.layer1);
    }
}

/// Embeds a sequence with two explicitly supplied stacked layers.
pub fn encode_sequence(
    layer1: &LstmParams,
    layer2: &LstmParams,
    inputs: &Matrix,
) -> Result<Vec<f64>, NeuralError> {
    let encoder = LstmEncoder {
        layer1: layer1.clone(),
        layer2: layer2.clone(),
    };
    Ok(encoder.encode(inputs)?.0)
}
