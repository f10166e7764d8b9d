use rand::Rng;

/// Output slots of the decoder heads.
pub const POSITION_OUT: std::ops::Range<usize> = 0..3;
pub const ROTATION_OUT: std::ops::Range<usize> = 3..7;
pub const SCALE_OUT: std::ops::Range<usize> = 7..10;
pub const OUTPUTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Position,
    Rotation,
    Scale,
}

impl Head {
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Head::Position => POSITION_OUT,
            Head::Rotation => ROTATION_OUT,
            Head::Scale => SCALE_OUT,
        }
    }
}

/// Residual ReLU MLP mapping a fused plane feature to per-Gaussian deltas.
///
/// `h₁ = relu(W₁x + b₁)`, then `hₗ = hₗ₋₁ + relu(Wₗhₗ₋₁ + bₗ)` for the
/// remaining hidden layers, then three linear heads (position 3, rotation 4,
/// log-scale 3). Head weights and biases start at zero, so a fresh decoder
/// outputs exactly zero while the hidden layers still carry signal and can
/// receive gradient once the heads move.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformDecoder {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub params: Vec<f64>,
}

/// Flat offsets of one dense layer within `params`.
#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: usize,
    bias: usize,
    rows: usize,
    cols: usize,
}

impl DeformDecoder {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, hidden_layers: usize, rng: &mut R) -> Self {
        assert!(hidden_layers >= 1);
        let mut decoder = Self {
            input,
            hidden,
            hidden_layers,
            params: Vec::new(),
        };
        let total = decoder.head_layer().bias + OUTPUTS;
        decoder.params = vec![0.0; total];
        for l in 0..hidden_layers {
            let layer = decoder.layer(l);
            let bound = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut decoder.params[layer.weight..layer.weight + layer.rows * layer.cols] {
                *w = rng.random_range(-bound..bound);
            }
        }
        decoder
    }

    /// All-zero parameters of the right shape, e.g. as a load target.
    pub fn zeros(input: usize, hidden: usize, hidden_layers: usize) -> Self {
        assert!(hidden_layers >= 1);
        let mut decoder = Self {
            input,
            hidden,
            hidden_layers,
            params: Vec::new(),
        };
        decoder.params = vec![0.0; decoder.head_layer().bias + OUTPUTS];
        decoder
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, l: usize) -> Dense {
        let mut offset = 0;
        for k in 0..l {
            let cols = if k == 0 { self.input } else { self.hidden };
            offset += self.hidden * cols + self.hidden;
        }
        let cols = if l == 0 { self.input } else { self.hidden };
        Dense {
            weight: offset,
            bias: offset + self.hidden * cols,
            rows: self.hidden,
            cols,
        }
    }

    fn head_layer(&self) -> Dense {
        let prev = self.layer(self.hidden_layers - 1);
        let offset = prev.bias + prev.rows;
        Dense {
            weight: offset,
            bias: offset + OUTPUTS * self.hidden,
            rows: OUTPUTS,
            cols: self.hidden,
        }
    }

    pub fn head_bias_mut(&mut self, head: Head) -> &mut [f64] {
        let bias = self.head_layer().bias;
        let r = head.range();
        &mut self.params[bias + r.start..bias + r.end]
    }

    /// Range of `params` holding the head weights and biases.
    pub fn head_params(&self) -> std::ops::Range<usize> {
        self.head_layer().weight..self.params.len()
    }

    fn dense(&self, layer: Dense, x: &[f64], out: &mut [f64]) {
        for r in 0..layer.rows {
            let row = &self.params[layer.weight + r * layer.cols..layer.weight + (r + 1) * layer.cols];
            let mut acc = self.params[layer.bias + r];
            for c in 0..layer.cols {
                acc += row[c] * x[c];
            }
            out[r] = acc;
        }
    }

    /// Forward pass; `trace` receives every hidden activation for backward.
    pub(crate) fn forward_trace(&self, x: &[f64], trace: &mut Vec<f64>, out: &mut [f64; OUTPUTS]) {
        let h = self.hidden;
        trace.clear();
        trace.resize(self.hidden_layers * 2 * h, 0.0);
        // trace layout per layer: [pre-activation (h), output h (h)]
        let mut pre = vec![0.0; h];
        self.dense(self.layer(0), x, &mut pre);
        for k in 0..h {
            trace[k] = pre[k];
            trace[h + k] = pre[k].max(0.0);
        }
        for l in 1..self.hidden_layers {
            let (done, rest) = trace.split_at_mut(l * 2 * h);
            let prev = &done[(l - 1) * 2 * h + h..l * 2 * h];
            self.dense(self.layer(l), prev, &mut pre);
            for k in 0..h {
                rest[k] = pre[k];
                rest[h + k] = prev[k] + pre[k].max(0.0);
            }
        }
        let last = &trace[(self.hidden_layers - 1) * 2 * h + h..self.hidden_layers * 2 * h];
        self.dense(self.head_layer(), last, out);
    }

    pub fn forward(&self, x: &[f64]) -> [f64; OUTPUTS] {
        let mut trace = Vec::new();
        let mut out = [0.0; OUTPUTS];
        self.forward_trace(x, &mut trace, &mut out);
        out
    }

    /// Accumulates parameter gradients into `d_params` and writes the input gradient.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        trace: &[f64],
        d_out: &[f64; OUTPUTS],
        d_params: &mut [f64],
        d_x: &mut [f64],
    ) {
        let h = self.hidden;
        let head = self.head_layer();
        let last = &trace[(self.hidden_layers - 1) * 2 * h + h..self.hidden_layers * 2 * h];
        let mut d_h = vec![0.0; h];
        for r in 0..OUTPUTS {
            let g = d_out[r];
            if g == 0.0 {
                continue;
            }
            d_params[head.bias + r] += g;
            for c in 0..h {
                d_params[head.weight + r * h + c] += g * last[c];
                d_h[c] += g * self.params[head.weight + r * h + c];
            }
        }
        let mut d_pre = vec![0.0; h];
        for l in (0..self.hidden_layers).rev() {
            let layer = self.layer(l);
            let pre = &trace[l * 2 * h..l * 2 * h + h];
            for k in 0..h {
                d_pre[k] = if pre[k] > 0.0 { d_h[k] } else { 0.0 };
            }
            let input: &[f64] = if l == 0 {
                x
            } else {
                &trace[(l - 1) * 2 * h + h..l * 2 * h]
            };
            // Residual layers pass d_h straight through as well.
            let mut d_in = if l == 0 { vec![0.0; layer.cols] } else { d_h.clone() };
            for r in 0..layer.rows {
                let g = d_pre[r];
                if g == 0.0 {
                    continue;
                }
                d_params[layer.bias + r] += g;
                for c in 0..layer.cols {
                    d_params[layer.weight + r * layer.cols + c] += g * input[c];
                    d_in[c] += g * self.params[layer.weight + r * layer.cols + c];
                }
            }
            if l == 0 {
                d_x.copy_from_slice(&d_in);
            } else {
                d_h = d_in;
            }
        }
    }
}
