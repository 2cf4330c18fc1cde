//! Layer kernels. Each layer works on one sample at a time with channels-last
//! layout: `[len, channels]` for 1D and `[height, width, channels]` for 2D.
//! Parameters are laid out as weights followed by biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerKind {
    /// Fully connected; weights `[inputs][outputs]`.
    Dense { outputs: usize },
    /// Same-padded 1D convolution, stride 1; weights `[width][in_channels][filters]`.
    Conv1d { filters: usize, width: usize },
    /// Same-padded 2D convolution, stride 1; weights `[kh][kw][in_channels][filters]`.
    Conv2d { filters: usize, kernel: [usize; 2] },
    Relu,
    /// Non-overlapping max pooling; trailing remainder is dropped.
    MaxPool1d { pool: usize },
    MaxPool2d { pool: usize },
    Flatten,
    Sigmoid,
}

/// A layer bound to its input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    pub fn new(kind: LayerKind, in_shape: &[usize]) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("{what} cannot take input shape {in_shape:?}"));
        let out_shape = match &kind {
            LayerKind::Dense { outputs } => {
                if in_shape.len() != 1 {
                    return Err(bad("dense"));
                }
                vec![*outputs]
            }
            LayerKind::Conv1d { filters, width } => {
                if in_shape.len() != 2 || width % 2 == 0 {
                    return Err(bad("conv1d"));
                }
                vec![in_shape[0], *filters]
            }
            LayerKind::Conv2d { filters, kernel } => {
                if in_shape.len() != 3 || kernel[0] % 2 == 0 || kernel[1] % 2 == 0 {
                    return Err(bad("conv2d"));
                }
                vec![in_shape[0], in_shape[1], *filters]
            }
            LayerKind::Relu | LayerKind::Sigmoid => in_shape.to_vec(),
            LayerKind::MaxPool1d { pool } => {
                if in_shape.len() != 2 || *pool == 0 || in_shape[0] < *pool {
                    return Err(bad("maxpool1d"));
                }
                vec![in_shape[0] / pool, in_shape[1]]
            }
            LayerKind::MaxPool2d { pool } => {
                if in_shape.len() != 3 || *pool == 0 || in_shape[0] < *pool || in_shape[1] < *pool {
                    return Err(bad("maxpool2d"));
                }
                vec![in_shape[0] / pool, in_shape[1] / pool, in_shape[2]]
            }
            LayerKind::Flatten => vec![in_shape.iter().product()],
        };
        Ok(Layer {
            kind,
            in_shape: in_shape.to_vec(),
            out_shape,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// `(weight count, bias count)`.
    pub fn param_counts(&self) -> (usize, usize) {
        match &self.kind {
            LayerKind::Dense { outputs } => (self.in_len() * outputs, *outputs),
            LayerKind::Conv1d { filters, width } => (width * self.in_shape[1] * filters, *filters),
            LayerKind::Conv2d { filters, kernel } => (kernel[0] * kernel[1] * self.in_shape[2] * filters, *filters),
            _ => (0, 0),
        }
    }

    pub fn param_count(&self) -> usize {
        let (w, b) = self.param_counts();
        w + b
    }

    /// `(fan_in, fan_out)` for Glorot initialization.
    pub fn fans(&self) -> (usize, usize) {
        match &self.kind {
            LayerKind::Dense { outputs } => (self.in_len(), *outputs),
            LayerKind::Conv1d { filters, width } => (width * self.in_shape[1], width * filters),
            LayerKind::Conv2d { filters, kernel } => {
                let area = kernel[0] * kernel[1];
                (area * self.in_shape[2], area * filters)
            }
            _ => (0, 0),
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        match &self.kind {
            LayerKind::Dense { outputs } => {
                let (w, b) = params.split_at(self.in_len() * outputs);
                out.copy_from_slice(b);
                for (i, &xi) in x.iter().enumerate() {
                    let row = &w[i * outputs..(i + 1) * outputs];
                    for (o, wv) in out.iter_mut().zip(row) {
                        *o += xi * wv;
                    }
                }
            }
            LayerKind::Conv1d { filters, width } => {
                let (len, cin) = (self.in_shape[0], self.in_shape[1]);
                let f = *filters;
                let (w, b) = params.split_at(width * cin * f);
                let pad = width / 2;
                for t in 0..len {
                    let o = &mut out[t * f..(t + 1) * f];
                    o.copy_from_slice(b);
                    for k in 0..*width {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        for c in 0..cin {
                            let xv = x[src * cin + c];
                            let wrow = &w[(k * cin + c) * f..(k * cin + c + 1) * f];
                            for (ov, wv) in o.iter_mut().zip(wrow) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
            LayerKind::Conv2d { filters, kernel } => {
                let (h, wd, cin) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let f = *filters;
                let (w, b) = params.split_at(kernel[0] * kernel[1] * cin * f);
                let (py, px) = (kernel[0] / 2, kernel[1] / 2);
                for oy in 0..h {
                    for ox in 0..wd {
                        let base = (oy * wd + ox) * f;
                        let o = &mut out[base..base + f];
                        o.copy_from_slice(b);
                        for ky in 0..kernel[0] {
                            let Some(iy) = (oy + ky).checked_sub(py).filter(|&v| v < h) else {
                                continue;
                            };
                            for kx in 0..kernel[1] {
                                let Some(ix) = (ox + kx).checked_sub(px).filter(|&v| v < wd) else {
                                    continue;
                                };
                                let xin = &x[(iy * wd + ix) * cin..(iy * wd + ix + 1) * cin];
                                let wbase = (ky * kernel[1] + kx) * cin;
                                for (c, &xv) in xin.iter().enumerate() {
                                    let wrow = &w[(wbase + c) * f..(wbase + c + 1) * f];
                                    for (ov, wv) in o.iter_mut().zip(wrow) {
                                        *ov += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Relu => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.max(0.0);
                }
            }
            LayerKind::Sigmoid => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = sigmoid(v);
                }
            }
            LayerKind::Flatten => out.copy_from_slice(x),
            LayerKind::MaxPool1d { pool } => {
                let c = self.in_shape[1];
                for t in 0..self.out_shape[0] {
                    for ch in 0..c {
                        out[t * c + ch] = (0..*pool)
                            .map(|k| x[(t * pool + k) * c + ch])
                            .fold(f64::NEG_INFINITY, f64::max);
                    }
                }
            }
            LayerKind::MaxPool2d { pool } => {
                let (wd, c) = (self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[0], self.out_shape[1]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..*pool {
                                for dx in 0..*pool {
                                    m = m.max(x[((oy * pool + dy) * wd + ox * pool + dx) * c + ch]);
                                }
                            }
                            out[(oy * ow + ox) * c + ch] = m;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `gparams` and, when `gin` is given,
    /// writes the input gradient into it (`gin` must arrive zeroed). `y` is this
    /// layer's forward output for `x`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        gout: &[f64],
        gin: Option<&mut [f64]>,
        gparams: &mut [f64],
    ) {
        let Some(gin) = gin else {
            self.param_gradients(x, gout, gparams);
            return;
        };
        match &self.kind {
            LayerKind::Dense { outputs } => {
                let nw = self.in_len() * outputs;
                let w = &params[..nw];
                let (gw, gb) = gparams.split_at_mut(nw);
                for (b, g) in gb.iter_mut().zip(gout) {
                    *b += g;
                }
                for (i, &xi) in x.iter().enumerate() {
                    let row = &w[i * outputs..(i + 1) * outputs];
                    let grow = &mut gw[i * outputs..(i + 1) * outputs];
                    let mut acc = 0.0;
                    for ((gwv, wv), g) in grow.iter_mut().zip(row).zip(gout) {
                        *gwv += xi * g;
                        acc += wv * g;
                    }
                    gin[i] = acc;
                }
            }
            LayerKind::Conv1d { filters, width } => {
                let (len, cin) = (self.in_shape[0], self.in_shape[1]);
                let f = *filters;
                let nw = width * cin * f;
                let w = &params[..nw];
                let (gw, gb) = gparams.split_at_mut(nw);
                let pad = width / 2;
                for t in 0..len {
                    let g = &gout[t * f..(t + 1) * f];
                    for (b, gv) in gb.iter_mut().zip(g) {
                        *b += gv;
                    }
                    for k in 0..*width {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        for c in 0..cin {
                            let xv = x[src * cin + c];
                            let off = (k * cin + c) * f;
                            let wrow = &w[off..off + f];
                            let grow = &mut gw[off..off + f];
                            let mut acc = 0.0;
                            for ((gwv, wv), gv) in grow.iter_mut().zip(wrow).zip(g) {
                                *gwv += xv * gv;
                                acc += wv * gv;
                            }
                            gin[src * cin + c] += acc;
                        }
                    }
                }
            }
            LayerKind::Conv2d { filters, kernel } => {
                let (h, wd, cin) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let f = *filters;
                let nw = kernel[0] * kernel[1] * cin * f;
                let w = &params[..nw];
                let (gw, gb) = gparams.split_at_mut(nw);
                let (py, px) = (kernel[0] / 2, kernel[1] / 2);
                for oy in 0..h {
                    for ox in 0..wd {
                        let base = (oy * wd + ox) * f;
                        let g = &gout[base..base + f];
                        for (b, gv) in gb.iter_mut().zip(g) {
                            *b += gv;
                        }
                        for ky in 0..kernel[0] {
                            let Some(iy) = (oy + ky).checked_sub(py).filter(|&v| v < h) else {
                                continue;
                            };
                            for kx in 0..kernel[1] {
                                let Some(ix) = (ox + kx).checked_sub(px).filter(|&v| v < wd) else {
                                    continue;
                                };
                                let pix = (iy * wd + ix) * cin;
                                let wbase = (ky * kernel[1] + kx) * cin;
                                for c in 0..cin {
                                    let xv = x[pix + c];
                                    let off = (wbase + c) * f;
                                    let wrow = &w[off..off + f];
                                    let grow = &mut gw[off..off + f];
                                    let mut acc = 0.0;
                                    for ((gwv, wv), gv) in grow.iter_mut().zip(wrow).zip(g) {
                                        *gwv += xv * gv;
                                        acc += wv * gv;
                                    }
                                    gin[pix + c] += acc;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Relu => {
                for ((gi, &g), &v) in gin.iter_mut().zip(gout).zip(x) {
                    *gi = if v > 0.0 { g } else { 0.0 };
                }
            }
            LayerKind::Sigmoid => {
                for ((gi, &g), &p) in gin.iter_mut().zip(gout).zip(y) {
                    *gi = g * p * (1.0 - p);
                }
            }
            LayerKind::Flatten => gin.copy_from_slice(gout),
            LayerKind::MaxPool1d { pool } => {
                let c = self.in_shape[1];
                for t in 0..self.out_shape[0] {
                    for ch in 0..c {
                        // first maximal element receives the gradient
                        let k = (0..*pool)
                            .find(|&k| x[(t * pool + k) * c + ch] == y[t * c + ch])
                            .unwrap_or(0);
                        gin[(t * pool + k) * c + ch] += gout[t * c + ch];
                    }
                }
            }
            LayerKind::MaxPool2d { pool } => {
                let (wd, c) = (self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[0], self.out_shape[1]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let o = (oy * ow + ox) * c + ch;
                            'find: for dy in 0..*pool {
                                for dx in 0..*pool {
                                    let i = ((oy * pool + dy) * wd + ox * pool + dx) * c + ch;
                                    if x[i] == y[o] {
                                        gin[i] += gout[o];
                                        break 'find;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Parameter gradients only; the input gradient is skipped.
    fn param_gradients(&self, x: &[f64], gout: &[f64], gparams: &mut [f64]) {
        match &self.kind {
            LayerKind::Dense { outputs } => {
                let nw = self.in_len() * outputs;
                let (gw, gb) = gparams.split_at_mut(nw);
                for (b, g) in gb.iter_mut().zip(gout) {
                    *b += g;
                }
                for (i, &xi) in x.iter().enumerate() {
                    for (gwv, g) in gw[i * outputs..(i + 1) * outputs].iter_mut().zip(gout) {
                        *gwv += xi * g;
                    }
                }
            }
            LayerKind::Conv1d { filters, width } => {
                let (len, cin) = (self.in_shape[0], self.in_shape[1]);
                let f = *filters;
                let (gw, gb) = gparams.split_at_mut(width * cin * f);
                let pad = width / 2;
                for t in 0..len {
                    let g = &gout[t * f..(t + 1) * f];
                    for (b, gv) in gb.iter_mut().zip(g) {
                        *b += gv;
                    }
                    for k in 0..*width {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        for c in 0..cin {
                            let xv = x[src * cin + c];
                            let off = (k * cin + c) * f;
                            for (gwv, gv) in gw[off..off + f].iter_mut().zip(g) {
                                *gwv += xv * gv;
                            }
                        }
                    }
                }
            }
            LayerKind::Conv2d { filters, kernel } => {
                let (h, wd, cin) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let f = *filters;
                let (gw, gb) = gparams.split_at_mut(kernel[0] * kernel[1] * cin * f);
                let (py, px) = (kernel[0] / 2, kernel[1] / 2);
                for oy in 0..h {
                    for ox in 0..wd {
                        let base = (oy * wd + ox) * f;
                        let g = &gout[base..base + f];
                        for (b, gv) in gb.iter_mut().zip(g) {
                            *b += gv;
                        }
                        for ky in 0..kernel[0] {
                            let Some(iy) = (oy + ky).checked_sub(py).filter(|&v| v < h) else {
                                continue;
                            };
                            for kx in 0..kernel[1] {
                                let Some(ix) = (ox + kx).checked_sub(px).filter(|&v| v < wd) else {
                                    continue;
                                };
                                let pix = (iy * wd + ix) * cin;
                                let wbase = (ky * kernel[1] + kx) * cin;
                                for c in 0..cin {
                                    let xv = x[pix + c];
                                    let off = (wbase + c) * f;
                                    for (gwv, gv) in gw[off..off + f].iter_mut().zip(g) {
                                        *gwv += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of `L = sum(r * layer(x))` for both the input
    /// and the parameters of one layer.
    fn check_layer(kind: LayerKind, in_shape: &[usize], seed: u64) {
        let layer = Layer::new(kind, in_shape).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..layer.in_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut params: Vec<f64> = (0..layer.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..layer.out_len()).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss = |p: &[f64], x: &[f64]| {
            let mut out = vec![0.0; layer.out_len()];
            layer.forward(p, x, &mut out);
            out.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = vec![0.0; layer.out_len()];
        layer.forward(&params, &x, &mut y);
        let mut gin = vec![0.0; layer.in_len()];
        let mut gp = vec![0.0; layer.param_count()];
        layer.backward(&params, &x, &y, &r, Some(&mut gin), &mut gp);
        let mut gp_only = vec![0.0; layer.param_count()];
        layer.backward(&params, &x, &y, &r, None, &mut gp_only);
        assert_eq!(gp, gp_only, "{:?} parameter-only pass", layer.kind);

        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for k in 0..params.len() {
            let orig = params[k];
            params[k] = orig + h;
            let up = loss(&params, &x);
            params[k] = orig - h;
            let down = loss(&params, &x);
            params[k] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(rel(gp[k], num) < 1e-4, "{:?} param {k}: {} vs {num}", layer.kind, gp[k]);
        }
        for k in 0..x.len() {
            let orig = x[k];
            x[k] = orig + h;
            let up = loss(&params, &x);
            x[k] = orig - h;
            let down = loss(&params, &x);
            x[k] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(rel(gin[k], num) < 1e-4, "{:?} input {k}: {} vs {num}", layer.kind, gin[k]);
        }
    }

    #[test]
    fn gradcheck_each_layer() {
        check_layer(LayerKind::Dense { outputs: 3 }, &[7], 1);
        check_layer(LayerKind::Conv1d { filters: 4, width: 3 }, &[9, 2], 2);
        check_layer(LayerKind::Conv2d { filters: 3, kernel: [3, 3] }, &[5, 6, 2], 3);
        check_layer(LayerKind::Relu, &[4, 4, 2], 4);
        check_layer(LayerKind::Sigmoid, &[6], 5);
        check_layer(LayerKind::MaxPool1d { pool: 2 }, &[9, 3], 6);
        check_layer(LayerKind::MaxPool2d { pool: 2 }, &[5, 4, 2], 7);
        check_layer(LayerKind::Flatten, &[3, 2, 2], 8);
    }

    #[test]
    fn same_padding_preserves_dims() {
        for s in 16..=24 {
            let c2 = Layer::new(LayerKind::Conv2d { filters: 64, kernel: [3, 3] }, &[s, s, 3]).unwrap();
            assert_eq!(c2.out_shape, vec![s, s, 64]);
            let c1 = Layer::new(LayerKind::Conv1d { filters: 64, width: 3 }, &[s * s, 1]).unwrap();
            assert_eq!(c1.out_shape, vec![s * s, 64]);
        }
    }

    #[test]
    fn pooling_floors_odd_lengths() {
        let p = Layer::new(LayerKind::MaxPool1d { pool: 2 }, &[271, 64]).unwrap();
        assert_eq!(p.out_shape, vec![135, 64]);
        let p = Layer::new(LayerKind::MaxPool2d { pool: 2 }, &[23, 23, 64]).unwrap();
        assert_eq!(p.out_shape, vec![11, 11, 64]);
    }

    #[test]
    fn conv_identity_kernel() {
        // a centered unit kernel reproduces its input
        let layer = Layer::new(LayerKind::Conv2d { filters: 1, kernel: [3, 3] }, &[3, 3, 1]).unwrap();
        let mut params = vec![0.0; 10];
        params[4] = 1.0;
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut out = vec![0.0; 9];
        layer.forward(&params, &x, &mut out);
        assert_eq!(out, x);
    }
}
