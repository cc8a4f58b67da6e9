//! Bidirectional LSTM encoder with exact backpropagation through time.
//!
//! Parameters use the stacked-gate layout: `w` is 4H×D and `u` is 4H×H with
//! gate rows ordered input, forget, cell, output. The forward and backward
//! directions are independent parameter sets; row `t` of a layer's output is
//! the concatenation of the forward hidden state at `t` and the backward
//! hidden state at `t`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

pub(crate) struct DirectionCache {
    gates_i: Array2<f64>,
    gates_f: Array2<f64>,
    gates_g: Array2<f64>,
    gates_o: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    hidden: Array2<f64>,
}

impl LstmDirection {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmDirection {
            w: Array2::zeros((4 * hidden, input_dim)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let mut dir = LstmDirection::zeros(input_dim, hidden);
        dir.w.mapv_inplace(|_| rng.random_range(-scale..scale));
        dir.u.mapv_inplace(|_| rng.random_range(-scale..scale));
        // forget-gate bias starts at 1 so early training does not flush state
        dir.b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        dir
    }

    fn hidden_size(&self) -> usize {
        self.u.ncols()
    }

    /// Runs the recurrence left to right over `xs` (T×D), returning hidden
    /// states (T×H) and the cache needed for backprop.
    fn forward(&self, xs: ArrayView2<'_, f64>) -> DirectionCache {
        let t_len = xs.nrows();
        let h = self.hidden_size();
        let pre = xs.dot(&self.w.t());

        let mut cache = DirectionCache {
            gates_i: Array2::zeros((t_len, h)),
            gates_f: Array2::zeros((t_len, h)),
            gates_g: Array2::zeros((t_len, h)),
            gates_o: Array2::zeros((t_len, h)),
            cells: Array2::zeros((t_len, h)),
            tanh_cells: Array2::zeros((t_len, h)),
            hidden: Array2::zeros((t_len, h)),
        };

        let mut h_prev = Array1::zeros(h);
        let mut c_prev: Array1<f64> = Array1::zeros(h);
        for t in 0..t_len {
            let z = &pre.row(t) + &self.u.dot(&h_prev) + &self.b;
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                let c = f * c_prev[j] + i * g;
                let tc = c.tanh();
                cache.gates_i[(t, j)] = i;
                cache.gates_f[(t, j)] = f;
                cache.gates_g[(t, j)] = g;
                cache.gates_o[(t, j)] = o;
                cache.cells[(t, j)] = c;
                cache.tanh_cells[(t, j)] = tc;
                cache.hidden[(t, j)] = o * tc;
            }
            h_prev.assign(&cache.hidden.row(t));
            c_prev.assign(&cache.cells.row(t));
        }
        cache
    }

    /// BPTT for one direction. `d_hidden` is the upstream gradient on this
    /// direction's hidden states. Returns parameter gradients and the
    /// gradient on the inputs.
    fn backward(
        &self,
        xs: ArrayView2<'_, f64>,
        cache: &DirectionCache,
        d_hidden: ArrayView2<'_, f64>,
    ) -> (LstmDirection, Array2<f64>) {
        let t_len = xs.nrows();
        let h = self.hidden_size();
        let mut dz = Array2::zeros((t_len, 4 * h));
        let mut dh_rec: Array1<f64> = Array1::zeros(h);
        let mut dc_rec: Array1<f64> = Array1::zeros(h);

        for t in (0..t_len).rev() {
            for j in 0..h {
                let i = cache.gates_i[(t, j)];
                let f = cache.gates_f[(t, j)];
                let g = cache.gates_g[(t, j)];
                let o = cache.gates_o[(t, j)];
                let tc = cache.tanh_cells[(t, j)];
                let c_prev = if t > 0 { cache.cells[(t - 1, j)] } else { 0.0 };

                let dh = d_hidden[(t, j)] + dh_rec[j];
                let dc = dc_rec[j] + dh * o * (1.0 - tc * tc);

                dz[(t, j)] = dc * g * i * (1.0 - i);
                dz[(t, h + j)] = dc * c_prev * f * (1.0 - f);
                dz[(t, 2 * h + j)] = dc * i * (1.0 - g * g);
                dz[(t, 3 * h + j)] = dh * tc * o * (1.0 - o);

                dc_rec[j] = dc * f;
            }
            dh_rec = self.u.t().dot(&dz.row(t));
        }

        let dw = dz.t().dot(&xs);
        let mut du = Array2::zeros((4 * h, h));
        if t_len > 1 {
            du = dz
                .slice(s![1.., ..])
                .t()
                .dot(&cache.hidden.slice(s![..t_len - 1, ..]));
        }
        let db = dz.sum_axis(Axis(0));
        let d_xs = dz.dot(&self.w);
        (LstmDirection { w: dw, u: du, b: db }, d_xs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
}

pub(crate) struct LayerCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
    /// This layer's input rows (owned so the stack can replay them).
    input: Array2<f64>,
}

impl BiLstmLayer {
    fn output(&self, cache: &LayerCache) -> Array2<f64> {
        let t_len = cache.input.nrows();
        let h = self.fwd.hidden_size();
        let mut out = Array2::zeros((t_len, 2 * h));
        for t in 0..t_len {
            out.slice_mut(s![t, ..h]).assign(&cache.fwd.hidden.row(t));
            // backward cache rows are in reversed time order
            out.slice_mut(s![t, h..])
                .assign(&cache.bwd.hidden.row(t_len - 1 - t));
        }
        out
    }
}

/// Stacked Bi-LSTM; every layer above the first consumes the previous
/// layer's concatenated outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<BiLstmLayer>,
    input_dim: usize,
    hidden_per_dir: usize,
}

impl BiLstm {
    /// `hidden_total` covers both directions and must be even.
    pub fn init(
        num_layers: usize,
        input_dim: usize,
        hidden_total: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(hidden_total % 2 == 0, "hidden_total must be even");
        assert!(num_layers >= 1);
        let h = hidden_total / 2;
        let layers = (0..num_layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { hidden_total };
                BiLstmLayer {
                    fwd: LstmDirection::init(d_in, h, rng),
                    bwd: LstmDirection::init(d_in, h, rng),
                }
            })
            .collect();
        BiLstm {
            layers,
            input_dim,
            hidden_per_dir: h,
        }
    }

    pub fn zeros(num_layers: usize, input_dim: usize, hidden_total: usize) -> Self {
        assert!(hidden_total % 2 == 0);
        let h = hidden_total / 2;
        let layers = (0..num_layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { hidden_total };
                BiLstmLayer {
                    fwd: LstmDirection::zeros(d_in, h),
                    bwd: LstmDirection::zeros(d_in, h),
                }
            })
            .collect();
        BiLstm {
            layers,
            input_dim,
            hidden_per_dir: h,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_total(&self) -> usize {
        2 * self.hidden_per_dir
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// T×hidden_total encoder outputs.
    pub fn forward(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        let (out, _) = self.forward_cached(xs);
        out
    }

    pub(crate) fn forward_cached(
        &self,
        xs: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Vec<LayerCache>) {
        assert_eq!(xs.ncols(), self.input_dim, "input width mismatch");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = xs.to_owned();
        for layer in &self.layers {
            let reversed = reverse_rows(current.view());
            let cache = LayerCache {
                fwd: layer.fwd.forward(current.view()),
                bwd: layer.bwd.forward(reversed.view()),
                input: current,
            };
            current = layer.output(&cache);
            caches.push(cache);
        }
        (current, caches)
    }

    /// Backpropagates `d_output` (gradient on the top layer's rows) through
    /// the stack; returns per-layer parameter gradients and the input
    /// gradient.
    pub(crate) fn backward(
        &self,
        caches: &[LayerCache],
        d_output: Array2<f64>,
    ) -> (Vec<BiLstmLayer>, Array2<f64>) {
        let h = self.hidden_per_dir;
        let mut grads: Vec<Option<BiLstmLayer>> = (0..self.layers.len()).map(|_| None).collect();
        let mut d_out = d_output;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[l];
            let t_len = cache.input.nrows();
            let d_fwd = d_out.slice(s![.., ..h]).to_owned();
            let d_bwd_rev = reverse_rows(d_out.slice(s![.., h..]));
            let (g_fwd, dx_fwd) = layer.fwd.backward(cache.input.view(), &cache.fwd, d_fwd.view());
            let (g_bwd, dx_bwd_rev) =
                layer
                    .bwd
                    .backward(reverse_rows(cache.input.view()).view(), &cache.bwd, d_bwd_rev.view());
            let mut d_in = dx_fwd;
            let dx_bwd = reverse_rows(dx_bwd_rev.view());
            d_in += &dx_bwd;
            debug_assert_eq!(d_in.nrows(), t_len);
            grads[l] = Some(BiLstmLayer {
                fwd: g_fwd,
                bwd: g_bwd,
            });
            d_out = d_in;
        }
        (grads.into_iter().map(|g| g.unwrap()).collect(), d_out)
    }

    /// Applies `f` to every parameter tensor of `self` paired with the same
    /// tensor in `other` (used for SGD updates and gradient accumulation).
    pub(crate) fn zip_tensors_mut(
        &mut self,
        other: &BiLstm,
        mut f: impl FnMut(&mut f64, &f64),
    ) {
        for (layer, olayer) in self.layers.iter_mut().zip(&other.layers) {
            for (dir, odir) in [(&mut layer.fwd, &olayer.fwd), (&mut layer.bwd, &olayer.bwd)] {
                for (a, b) in dir.w.iter_mut().zip(odir.w.iter()) {
                    f(a, b);
                }
                for (a, b) in dir.u.iter_mut().zip(odir.u.iter()) {
                    f(a, b);
                }
                for (a, b) in dir.b.iter_mut().zip(odir.b.iter()) {
                    f(a, b);
                }
            }
        }
    }

    pub(crate) fn for_each_tensor(&self, mut f: impl FnMut(&f64)) {
        for layer in &self.layers {
            for dir in [&layer.fwd, &layer.bwd] {
                dir.w.iter().for_each(&mut f);
                dir.u.iter().for_each(&mut f);
                dir.b.iter().for_each(&mut f);
            }
        }
    }

    /// A net with the same geometry but the given layer tensors (used to
    /// carry gradients in model shape).
    pub(crate) fn with_layers(&self, layers: Vec<BiLstmLayer>) -> BiLstm {
        debug_assert_eq!(layers.len(), self.layers.len());
        BiLstm {
            layers,
            input_dim: self.input_dim,
            hidden_per_dir: self.hidden_per_dir,
        }
    }

    /// SGD step with decoupled weight decay on the weight matrices; biases
    /// decay-free so the forget-gate offset is not pulled toward zero.
    pub(crate) fn sgd_step(&mut self, grads: &BiLstm, lr: f64, weight_decay: f64) {
        for (layer, glayer) in self.layers.iter_mut().zip(&grads.layers) {
            for (dir, gdir) in [(&mut layer.fwd, &glayer.fwd), (&mut layer.bwd, &glayer.bwd)] {
                dir.w.zip_mut_with(&gdir.w, |a, &g| *a -= lr * g + lr * weight_decay * *a);
                dir.u.zip_mut_with(&gdir.u, |a, &g| *a -= lr * g + lr * weight_decay * *a);
                dir.b.zip_mut_with(&gdir.b, |a, &g| *a -= lr * g);
            }
        }
    }
}

pub(crate) fn reverse_rows(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(m.raw_dim());
    let t_len = m.nrows();
    for t in 0..t_len {
        out.row_mut(t).assign(&m.row(t_len - 1 - t));
    }
    out
}
