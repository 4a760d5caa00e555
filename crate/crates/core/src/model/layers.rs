//! Trainable building blocks with explicit forward caches and backward
//! passes.

use rand::Rng;

use super::linalg::{col2im, conv_out_dims, gemm, im2col};

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    /// Uniform fan-in scaled initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub(crate) fn uniform(
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::new(name, shape, value)
    }

    pub(crate) fn filled(name: impl Into<String>, len: usize, v: f64) -> Self {
        Self::new(name, vec![len], vec![v; len])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// "Same"-padded 2D convolution, used for the linear output layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub(crate) fn new(name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            cin,
            cout,
            kernel,
            weight: Param::uniform(format!("{name}.weight"), vec![cout, fan_in], fan_in, rng),
            bias: Param::filled(format!("{name}.bias"), cout, 0.0),
        }
    }

    /// Returns the output and the patch matrix needed for backward.
    pub(crate) fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let cols = im2col(x, self.cin, h, w, self.kernel, 1);
        let p = h * w;
        let mut out = vec![0.0; self.cout * p];
        for (o, b) in out.chunks_mut(p).zip(&self.bias.value) {
            o.fill(*b);
        }
        let fan_in = self.cin * self.kernel * self.kernel;
        gemm(self.cout, fan_in, p, 1.0, &self.weight.value, false, &cols, false, 1.0, &mut out);
        (out, cols)
    }

    pub(crate) fn backward(&mut self, dout: &[f64], cols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let p = h * w;
        let fan_in = self.cin * self.kernel * self.kernel;
        gemm(self.cout, p, fan_in, 1.0, dout, false, cols, true, 1.0, &mut self.weight.grad);
        for (g, d) in self.bias.grad.iter_mut().zip(dout.chunks(p)) {
            *g += d.iter().sum::<f64>();
        }
        let mut dcols = vec![0.0; fan_in * p];
        gemm(fan_in, self.cout, p, 1.0, &self.weight.value, true, dout, false, 0.0, &mut dcols);
        col2im(&dcols, self.cin, h, w, self.kernel, 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Convolutional LSTM cell.
///
/// Gate pre-activations are `Wx * x_t + Wh * h_{t-1} + b` with gate order
/// input, forget, candidate, output. The input convolution may be strided,
/// so the state lives at the reduced resolution.
#[derive(Debug, Clone)]
pub struct ConvLstm {
    pub cin: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub stride: usize,
    pub wx: Param,
    pub wh: Param,
    pub bias: Param,
}

/// Per-step values retained for backpropagation through time.
#[derive(Debug, Clone)]
struct StepCache {
    cols_x: Vec<f64>,
    cols_h: Option<Vec<f64>>,
    /// Activated gates, `4 * hidden x p`.
    gates: Vec<f64>,
    c_prev: Option<Vec<f64>>,
    tanh_c: Vec<f64>,
}

/// Result of running one sample through all time steps.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    steps: Vec<StepCache>,
    /// Hidden state after every step.
    pub hs: Vec<Vec<f64>>,
    /// Cell state after the last step.
    pub c_last: Vec<f64>,
    seeded: bool,
}

impl ConvLstm {
    pub(crate) fn new(
        name: &str,
        cin: usize,
        hidden: usize,
        kernel: usize,
        stride: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fx = cin * kernel * kernel;
        let fh = hidden * kernel * kernel;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(forget_bias);
        Self {
            cin,
            hidden,
            kernel,
            stride,
            wx: Param::uniform(format!("{name}.wx"), vec![4 * hidden, fx], fx + fh, rng),
            wh: Param::uniform(format!("{name}.wh"), vec![4 * hidden, fh], fx + fh, rng),
            bias: Param::new(format!("{name}.bias"), vec![4 * hidden], bias),
        }
    }

    pub(crate) fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        conv_out_dims(h, w, self.kernel, self.stride)
    }

    /// Runs the cell over `xs` (each `cin x h x w`). `init` seeds `(h0, c0)`;
    /// otherwise the state starts at zero.
    pub(crate) fn forward(
        &self,
        xs: &[&[f64]],
        h: usize,
        w: usize,
        init: Option<(&[f64], &[f64])>,
    ) -> LstmTrace {
        let (ho, wo) = self.out_dims(h, w);
        let p = ho * wo;
        let hc = self.hidden;
        let fx = self.cin * self.kernel * self.kernel;
        let fh = hc * self.kernel * self.kernel;

        let mut steps = Vec::with_capacity(xs.len());
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
        let mut h_prev: Option<Vec<f64>> = init.map(|(h0, _)| h0.to_vec());
        let mut c_prev: Option<Vec<f64>> = init.map(|(_, c0)| c0.to_vec());

        for x in xs {
            let mut pre = vec![0.0; 4 * hc * p];
            for (row, b) in pre.chunks_mut(p).zip(&self.bias.value) {
                row.fill(*b);
            }
            let cols_x = im2col(x, self.cin, h, w, self.kernel, self.stride);
            gemm(4 * hc, fx, p, 1.0, &self.wx.value, false, &cols_x, false, 1.0, &mut pre);
            let cols_h = h_prev.as_ref().map(|hp| {
                let cols = im2col(hp, hc, ho, wo, self.kernel, 1);
                gemm(4 * hc, fh, p, 1.0, &self.wh.value, false, &cols, false, 1.0, &mut pre);
                cols
            });

            let (gi, rest) = pre.split_at_mut(hc * p);
            let (gf, rest) = rest.split_at_mut(hc * p);
            let (gg, go) = rest.split_at_mut(hc * p);
            gi.iter_mut().for_each(|v| *v = sigmoid(*v));
            gf.iter_mut().for_each(|v| *v = sigmoid(*v));
            gg.iter_mut().for_each(|v| *v = v.tanh());
            go.iter_mut().for_each(|v| *v = sigmoid(*v));

            let mut c = vec![0.0; hc * p];
            for j in 0..hc * p {
                let carry = c_prev.as_ref().map_or(0.0, |cp| gf[j] * cp[j]);
                c[j] = carry + gi[j] * gg[j];
            }
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = go.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

            steps.push(StepCache {
                cols_x,
                cols_h,
                gates: pre,
                c_prev: c_prev.take(),
                tanh_c,
            });
            h_prev = Some(h_new.clone());
            c_prev = Some(c);
            hs.push(h_new);
        }
        LstmTrace {
            steps,
            hs,
            c_last: c_prev.unwrap_or_default(),
            seeded: init.is_some(),
        }
    }

    /// Backpropagation through time for one sample.
    ///
    /// `dhs[t]` is the loss gradient w.r.t. the hidden output of step `t`;
    /// `d_last` adds gradients w.r.t. the final `(h, c)` state. Returns the
    /// input gradients per step and, for seeded runs, the gradient w.r.t.
    /// `(h0, c0)`.
    #[allow(clippy::type_complexity)]
    pub(crate) fn backward(
        &mut self,
        trace: &LstmTrace,
        dhs: &[Vec<f64>],
        d_last: Option<(&[f64], &[f64])>,
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> (Vec<Vec<f64>>, Option<(Vec<f64>, Vec<f64>)>) {
        let (ho, wo) = self.out_dims(h, w);
        let p = ho * wo;
        let hc = self.hidden;
        let n = hc * p;
        let fx = self.cin * self.kernel * self.kernel;
        let fh = hc * self.kernel * self.kernel;
        let steps = trace.steps.len();

        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        if let Some((dh, dc)) = d_last {
            dh_next.copy_from_slice(dh);
            dc_next.copy_from_slice(dc);
        }
        let mut dxs = vec![Vec::new(); steps];
        let mut d_init = None;
        let mut da = vec![0.0; 4 * n];

        for t in (0..steps).rev() {
            let st = &trace.steps[t];
            let (gi, rest) = st.gates.split_at(n);
            let (gf, rest) = rest.split_at(n);
            let (gg, go) = rest.split_at(n);
            {
                let (dai, rest) = da.split_at_mut(n);
                let (daf, rest) = rest.split_at_mut(n);
                let (dag, dao) = rest.split_at_mut(n);
                for j in 0..n {
                    let dh = dhs[t][j] + dh_next[j];
                    let tc = st.tanh_c[j];
                    let dc = dc_next[j] + dh * go[j] * (1.0 - tc * tc);
                    let cp = st.c_prev.as_ref().map_or(0.0, |c| c[j]);
                    dao[j] = dh * tc * go[j] * (1.0 - go[j]);
                    dai[j] = dc * gg[j] * gi[j] * (1.0 - gi[j]);
                    dag[j] = dc * gi[j] * (1.0 - gg[j] * gg[j]);
                    daf[j] = dc * cp * gf[j] * (1.0 - gf[j]);
                    dc_next[j] = dc * gf[j];
                }
            }

            gemm(4 * hc, p, fx, 1.0, &da, false, &st.cols_x, true, 1.0, &mut self.wx.grad);
            for (g, row) in self.bias.grad.iter_mut().zip(da.chunks(p)) {
                *g += row.iter().sum::<f64>();
            }
            if need_dx {
                let mut dcols = vec![0.0; fx * p];
                gemm(fx, 4 * hc, p, 1.0, &self.wx.value, true, &da, false, 0.0, &mut dcols);
                dxs[t] = col2im(&dcols, self.cin, h, w, self.kernel, self.stride);
            }
            match &st.cols_h {
                Some(cols_h) => {
                    gemm(4 * hc, p, fh, 1.0, &da, false, cols_h, true, 1.0, &mut self.wh.grad);
                    let mut dcols = vec![0.0; fh * p];
                    gemm(fh, 4 * hc, p, 1.0, &self.wh.value, true, &da, false, 0.0, &mut dcols);
                    dh_next = col2im(&dcols, hc, ho, wo, self.kernel, 1);
                }
                None => dh_next.fill(0.0),
            }
        }
        if trace.seeded {
            d_init = Some((dh_next, dc_next));
        }
        (dxs, d_init)
    }
}

/// Per-channel batch normalization over every `(sample, step, position)`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    /// Unbiased batch variance, fed to the running average.
    var_unbiased: Vec<f64>,
}

impl BatchNorm {
    pub(crate) fn new(name: &str, channels: usize, momentum: f64, eps: f64) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), channels, 1.0),
            beta: Param::filled(format!("{name}.beta"), channels, 0.0),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
        }
    }

    /// Normalizes with batch statistics. Running averages are updated
    /// separately by [`BatchNorm::update_running`].
    pub(crate) fn forward_train(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BnCache) {
        let c = self.channels;
        let p = xs[0].len() / c;
        let count = (xs.len() * p) as f64;
        let mut mean = vec![0.0; c];
        for x in xs {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += x[ch * p..(ch + 1) * p].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for x in xs {
            for (ch, v) in var.iter_mut().enumerate() {
                *v += x[ch * p..(ch + 1) * p]
                    .iter()
                    .map(|a| (a - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let var_unbiased = var.iter().map(|v| v * unbias).collect();

        let mut xhat = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xh = vec![0.0; x.len()];
            let mut y = vec![0.0; x.len()];
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for j in ch * p..(ch + 1) * p {
                    xh[j] = (x[j] - mean[ch]) * inv_std[ch];
                    y[j] = g * xh[j] + b;
                }
            }
            xhat.push(xh);
            ys.push(y);
        }
        (
            ys,
            BnCache {
                xhat,
                inv_std,
                mean,
                var_unbiased,
            },
        )
    }

    pub(crate) fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        for ch in 0..self.channels {
            self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * cache.mean[ch];
            self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * cache.var_unbiased[ch];
        }
    }

    pub(crate) fn forward_infer(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let c = self.channels;
        xs.iter()
            .map(|x| {
                let p = x.len() / c;
                let mut y = vec![0.0; x.len()];
                for ch in 0..c {
                    let scale = self.gamma.value[ch] / (self.running_var[ch] + self.eps).sqrt();
                    let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
                    for j in ch * p..(ch + 1) * p {
                        y[j] = x[j] * scale + shift;
                    }
                }
                y
            })
            .collect()
    }

    pub(crate) fn backward(&mut self, cache: &BnCache, dys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let c = self.channels;
        let p = dys[0].len() / c;
        let count = (dys.len() * p) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (dy, xh) in dys.iter().zip(&cache.xhat) {
            for ch in 0..c {
                for j in ch * p..(ch + 1) * p {
                    sum_dy[ch] += dy[j];
                    sum_dy_xhat[ch] += dy[j] * xh[j];
                }
            }
        }
        for ch in 0..c {
            self.beta.grad[ch] += sum_dy[ch];
            self.gamma.grad[ch] += sum_dy_xhat[ch];
        }
        dys.iter()
            .zip(&cache.xhat)
            .map(|(dy, xh)| {
                let mut dx = vec![0.0; dy.len()];
                for ch in 0..c {
                    let k = self.gamma.value[ch] * cache.inv_std[ch] / count;
                    for j in ch * p..(ch + 1) * p {
                        dx[j] = k * (count * dy[j] - sum_dy[ch] - xh[j] * sum_dy_xhat[ch]);
                    }
                }
                dx
            })
            .collect()
    }
}
