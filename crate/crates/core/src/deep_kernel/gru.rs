//! Single-layer gated recurrent unit with an explicit backward pass.
//!
//! Gate order and update rule follow the common framework convention:
//!
//! ```text
//! r_t = σ(W_ir x_t + b_ir + W_hr h_{t-1} + b_hr)
//! z_t = σ(W_iz x_t + b_iz + W_hz h_{t-1} + b_hz)
//! n_t = tanh(W_in x_t + b_in + r_t ⊙ (W_hn h_{t-1} + b_hn))
//! h_t = (1 - z_t) ⊙ n_t + z_t ⊙ h_{t-1}
//! ```
//!
//! Parameters are one flat slice: `W_ih` (3H × I), `W_hh` (3H × H), `b_ih` (3H),
//! `b_hh` (3H), matrices row-major with gate blocks in r, z, n order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruShape {
    pub input: usize,
    pub hidden: usize,
}

impl GruShape {
    pub fn n_params(&self) -> usize {
        let g = 3 * self.hidden;
        g * self.input + g * self.hidden + 2 * g
    }

    fn offsets(&self) -> [usize; 4] {
        let g = 3 * self.hidden;
        let w_hh = g * self.input;
        let b_ih = w_hh + g * self.hidden;
        let b_hh = b_ih + g;
        [0, w_hh, b_ih, b_hh]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    /// Hidden state after each step, `T × H`.
    pub hidden: Vec<f64>,
    reset: Vec<f64>,
    update: Vec<f64>,
    candidate: Vec<f64>,
    /// `W_hn h_{t-1} + b_hn` per step.
    hidden_candidate: Vec<f64>,
}

/// Borrowed view of a GRU's parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruCell<'a> {
    shape: GruShape,
    params: &'a [f64],
}

impl<'a> GruCell<'a> {
    pub fn new(shape: GruShape, params: &'a [f64]) -> Self {
        assert_eq!(params.len(), shape.n_params(), "gru parameter length");
        Self { shape, params }
    }

    pub fn shape(&self) -> GruShape {
        self.shape
    }

    fn parts(&self) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let [_, o_hh, o_bih, o_bhh] = self.shape.offsets();
        let p = self.params;
        (&p[..o_hh], &p[o_hh..o_bih], &p[o_bih..o_bhh], &p[o_bhh..])
    }

    /// Run over `xs` (`T × I`, row-major) from a zero initial state.
    pub fn forward(&self, xs: &[f64]) -> GruTrace {
        let (i_dim, h_dim) = (self.shape.input, self.shape.hidden);
        debug_assert_eq!(xs.len() % i_dim, 0);
        let steps = xs.len() / i_dim;
        let (w_ih, w_hh, b_ih, b_hh) = self.parts();

        let mut trace = GruTrace {
            hidden: vec![0.0; steps * h_dim],
            reset: vec![0.0; steps * h_dim],
            update: vec![0.0; steps * h_dim],
            candidate: vec![0.0; steps * h_dim],
            hidden_candidate: vec![0.0; steps * h_dim],
        };
        let mut h_prev = vec![0.0; h_dim];
        let mut gi = vec![0.0; 3 * h_dim];
        let mut gh = vec![0.0; 3 * h_dim];

        for t in 0..steps {
            let x = &xs[t * i_dim..(t + 1) * i_dim];
            for row in 0..3 * h_dim {
                let wi = &w_ih[row * i_dim..(row + 1) * i_dim];
                gi[row] = b_ih[row] + wi.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                let wh = &w_hh[row * h_dim..(row + 1) * h_dim];
                gh[row] = b_hh[row] + wh.iter().zip(&h_prev).map(|(w, v)| w * v).sum::<f64>();
            }
            let base = t * h_dim;
            for k in 0..h_dim {
                let r = sigmoid(gi[k] + gh[k]);
                let z = sigmoid(gi[h_dim + k] + gh[h_dim + k]);
                let hn = gh[2 * h_dim + k];
                let n = (gi[2 * h_dim + k] + r * hn).tanh();
                let hp = h_prev[k];
                trace.reset[base + k] = r;
                trace.update[base + k] = z;
                trace.candidate[base + k] = n;
                trace.hidden_candidate[base + k] = hn;
                trace.hidden[base + k] = (1.0 - z) * n + z * hp;
            }
            h_prev.copy_from_slice(&trace.hidden[base..base + h_dim]);
        }
        trace
    }

    /// Backpropagate `d_hidden` (`∂L/∂h_t`, `T × H`) through time.
    ///
    /// Accumulates parameter gradients into `d_params` and returns `∂L/∂x_t`.
    pub fn backward(
        &self,
        xs: &[f64],
        trace: &GruTrace,
        d_hidden: &[f64],
        d_params: &mut [f64],
    ) -> Vec<f64> {
        let (i_dim, h_dim) = (self.shape.input, self.shape.hidden);
        let steps = xs.len() / i_dim;
        debug_assert_eq!(d_hidden.len(), steps * h_dim);
        debug_assert_eq!(d_params.len(), self.shape.n_params());
        let (w_ih, w_hh, _, _) = self.parts();
        let [_, o_hh, o_bih, o_bhh] = self.shape.offsets();

        let mut d_xs = vec![0.0; xs.len()];
        let mut carry = vec![0.0; h_dim];
        let mut d_gi = vec![0.0; 3 * h_dim];
        let mut d_gh = vec![0.0; 3 * h_dim];
        let zero = vec![0.0; h_dim];

        for t in (0..steps).rev() {
            let base = t * h_dim;
            let h_prev: &[f64] = if t == 0 {
                &zero
            } else {
                &trace.hidden[(t - 1) * h_dim..t * h_dim]
            };
            let mut d_prev = vec![0.0; h_dim];
            for k in 0..h_dim {
                let dh = d_hidden[base + k] + carry[k];
                let r = trace.reset[base + k];
                let z = trace.update[base + k];
                let n = trace.candidate[base + k];
                let hn = trace.hidden_candidate[base + k];

                let dn = dh * (1.0 - z);
                let dz = dh * (h_prev[k] - n);
                d_prev[k] = dh * z;

                let da_n = dn * (1.0 - n * n);
                let dr = da_n * hn;
                let da_z = dz * z * (1.0 - z);
                let da_r = dr * r * (1.0 - r);

                d_gi[k] = da_r;
                d_gi[h_dim + k] = da_z;
                d_gi[2 * h_dim + k] = da_n;
                d_gh[k] = da_r;
                d_gh[h_dim + k] = da_z;
                d_gh[2 * h_dim + k] = da_n * r;
            }

            let x = &xs[t * i_dim..(t + 1) * i_dim];
            let dx = &mut d_xs[t * i_dim..(t + 1) * i_dim];
            for row in 0..3 * h_dim {
                let gi = d_gi[row];
                let gh = d_gh[row];
                let wi = &w_ih[row * i_dim..(row + 1) * i_dim];
                let dwi = &mut d_params[row * i_dim..(row + 1) * i_dim];
                for c in 0..i_dim {
                    dwi[c] += gi * x[c];
                    dx[c] += gi * wi[c];
                }
                let wh = &w_hh[row * h_dim..(row + 1) * h_dim];
                let dwh = &mut d_params[o_hh + row * h_dim..o_hh + (row + 1) * h_dim];
                for c in 0..h_dim {
                    dwh[c] += gh * h_prev[c];
                    d_prev[c] += gh * wh[c];
                }
                d_params[o_bih + row] += gi;
                d_params[o_bhh + row] += gh;
            }
            carry = d_prev;
        }
        d_xs
    }
}
