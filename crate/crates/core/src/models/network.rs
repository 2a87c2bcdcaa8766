use ndarray::ArrayView2;
use rand::Rng;

use super::spec::{Family, Head, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Parameter offsets into the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    steps: usize,
    feat: usize,
    hidden: usize,
    out: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    len: usize,
}

impl Layout {
    fn new(s: &ModelSpec) -> Self {
        let (c, t) = (s.channels, s.steps());
        let (f, k, p, e) = (s.filters, s.kernel, s.pool_bins, s.encoder_dim);
        let (trunk, feat) = match s.family {
            Family::LinearSoftmax => (0, c * t),
            Family::ChannelwiseCnn => (c * f * k + c * f, c * f * p),
            Family::PooledCnn => (f * c * k + f, f * p),
            Family::RecurrentEncoder => (4 * e * c + 4 * e * e + 4 * e, e),
        };
        let hidden = s.head.hidden_dim(s);
        let w1 = trunk;
        let b1 = w1 + hidden * feat;
        let w2 = b1 + hidden;
        let (out, b2, len) = if s.head == Head::ReluFc40 {
            let b2 = w2 + s.n_classes * hidden;
            (s.n_classes, b2, b2 + s.n_classes)
        } else {
            (hidden, w2, w2)
        };
        Self {
            steps: t,
            feat,
            hidden,
            out,
            w1,
            b1,
            w2,
            b2,
            len,
        }
    }
}

/// Intermediate activations of one forward pass.
pub(crate) struct Trace<'a> {
    input: &'a [f64],
    /// Convolution pre-activations, or LSTM gates.
    z: Vec<f64>,
    /// LSTM cell and hidden states, `(steps + 1) x hidden`, row 0 zero.
    cells: Vec<f64>,
    hiddens: Vec<f64>,
    feat: Vec<f64>,
    z1: Vec<f64>,
    pub(crate) enc: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

/// A model of one family/head with a flat `f64` parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: Vec<f64>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bin_range(j: usize, len: usize, bins: usize) -> (usize, usize) {
    (j * len / bins, (j + 1) * len / bins)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient with
/// respect to the logits.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let mut g = softmax(logits);
    g[label] -= 1.0;
    (lse - logits[label], g)
}

impl Network {
    /// Initializes parameters uniformly in `±1/sqrt(fan_in)`. Convolution
    /// biases start at zero.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let l = Layout::new(&spec);
        let mut params = vec![0.0; l.len];
        let mut rng = stream(seed, &[0x1417]);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut Vec<f64>| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-a..a);
            }
        };
        let (c, f, k, e) = (spec.channels, spec.filters, spec.kernel, spec.encoder_dim);
        match spec.family {
            Family::LinearSoftmax => {}
            Family::ChannelwiseCnn => fill(0..c * f * k, k, &mut params),
            Family::PooledCnn => fill(0..f * c * k, c * k, &mut params),
            Family::RecurrentEncoder => {
                fill(0..4 * e * c, c, &mut params);
                fill(4 * e * c..l.w1, e, &mut params);
            }
        }
        fill(l.w1..l.w2, l.feat, &mut params);
        if spec.head == Head::ReluFc40 {
            fill(l.w2..l.len, l.hidden, &mut params);
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let n = Layout::new(&spec).len;
        if params.len() != n {
            return Err(Error::Spec(format!("expected {n} parameters, got {}", params.len())));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn encoding_dim(&self) -> usize {
        Layout::new(&self.spec).hidden
    }

    pub fn output_dim(&self) -> usize {
        Layout::new(&self.spec).out
    }

    /// Checks the shape and decimates the time axis by block averaging.
    /// Returns the channel-major `channels x steps` input.
    pub fn prepare(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let s = &self.spec;
        if x.dim() != (s.channels, s.samples) {
            return Err(Error::Spec(format!(
                "input is {}x{}, model expects {}x{}",
                x.nrows(),
                x.ncols(),
                s.channels,
                s.samples
            )));
        }
        let (d, t) = (s.downsample, s.steps());
        let mut out = Vec::with_capacity(s.channels * t);
        for row in x.rows() {
            for j in 0..t {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += row[j * d + i];
                }
                out.push(acc / d as f64);
            }
        }
        Ok(out)
    }

    pub(crate) fn trace<'a>(&self, input: &'a [f64]) -> Trace<'a> {
        let l = Layout::new(&self.spec);
        let mut tr = Trace {
            input,
            z: Vec::new(),
            cells: Vec::new(),
            hiddens: Vec::new(),
            feat: vec![0.0; l.feat],
            z1: vec![0.0; l.hidden],
            enc: vec![0.0; l.hidden],
            logits: Vec::new(),
        };
        self.trunk_forward(&l, &mut tr);
        let p = &self.params;
        for (i, z) in tr.z1.iter_mut().enumerate() {
            *z = p[l.b1 + i] + dot(&p[l.w1 + i * l.feat..][..l.feat], &tr.feat);
        }
        let rectified = !matches!(self.spec.head, Head::Fc40 | Head::Fc128);
        for (e, &z) in tr.enc.iter_mut().zip(&tr.z1) {
            *e = if rectified { relu(z) } else { z };
        }
        tr.logits = if self.spec.head == Head::ReluFc40 {
            (0..l.out)
                .map(|i| p[l.b2 + i] + dot(&p[l.w2 + i * l.hidden..][..l.hidden], &tr.enc))
                .collect()
        } else {
            tr.enc.clone()
        };
        tr
    }

    fn trunk_forward(&self, l: &Layout, tr: &mut Trace) {
        let s = &self.spec;
        let p = &self.params;
        let (c, t) = (s.channels, l.steps);
        let x = tr.input;
        match s.family {
            Family::LinearSoftmax => tr.feat.copy_from_slice(x),
            Family::ChannelwiseCnn => {
                let (f, k, bins) = (s.filters, s.kernel, s.pool_bins);
                let n = t - k + 1;
                let bo = c * f * k;
                tr.z = vec![0.0; c * f * n];
                for ch in 0..c {
                    let xc = &x[ch * t..(ch + 1) * t];
                    for fi in 0..f {
                        let u = ch * f + fi;
                        let w = &p[u * k..(u + 1) * k];
                        let z = &mut tr.z[u * n..(u + 1) * n];
                        for (i, zi) in z.iter_mut().enumerate() {
                            *zi = p[bo + u] + dot(w, &xc[i..i + k]);
                        }
                        for j in 0..bins {
                            let (a, b) = bin_range(j, n, bins);
                            tr.feat[u * bins + j] = z[a..b].iter().map(|&v| relu(v)).sum::<f64>() / (b - a) as f64;
                        }
                    }
                }
            }
            Family::PooledCnn => {
                let (f, k, bins) = (s.filters, s.kernel, s.pool_bins);
                let n = t - k + 1;
                let bo = f * c * k;
                tr.z = vec![0.0; f * n];
                for fi in 0..f {
                    let z = &mut tr.z[fi * n..(fi + 1) * n];
                    z.fill(p[bo + fi]);
                    for ch in 0..c {
                        let w = &p[(fi * c + ch) * k..][..k];
                        let xc = &x[ch * t..(ch + 1) * t];
                        for (i, zi) in z.iter_mut().enumerate() {
                            *zi += dot(w, &xc[i..i + k]);
                        }
                    }
                    for j in 0..bins {
                        let (a, b) = bin_range(j, n, bins);
                        tr.feat[fi * bins + j] = z[a..b].iter().map(|&v| relu(v)).sum::<f64>() / (b - a) as f64;
                    }
                }
            }
            Family::RecurrentEncoder => {
                let h = s.encoder_dim;
                let (wx, wh, b) = (0, 4 * h * c, 4 * h * c + 4 * h * h);
                let xt = transpose(x, c, t);
                tr.z = vec![0.0; t * 4 * h];
                tr.cells = vec![0.0; (t + 1) * h];
                tr.hiddens = vec![0.0; (t + 1) * h];
                for step in 0..t {
                    let xs = &xt[step * c..(step + 1) * c];
                    let (prev, next) = tr.hiddens.split_at_mut((step + 1) * h);
                    let hp = &prev[step * h..];
                    let gates = &mut tr.z[step * 4 * h..(step + 1) * 4 * h];
                    for (r, g) in gates.iter_mut().enumerate() {
                        let a = p[b + r] + dot(&p[wx + r * c..][..c], xs) + dot(&p[wh + r * h..][..h], hp);
                        *g = if r / h == 2 { a.tanh() } else { sigmoid(a) };
                    }
                    let (cp, cn) = tr.cells.split_at_mut((step + 1) * h);
                    let cp = &cp[step * h..];
                    for j in 0..h {
                        let (i, fg, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                        cn[j] = fg * cp[j] + i * g;
                        next[j] = o * cn[j].tanh();
                    }
                }
                tr.feat.copy_from_slice(&tr.hiddens[t * h..]);
            }
        }
    }

    /// Accumulates the parameter gradient of a loss whose gradient with
    /// respect to the logits is `dlogits`.
    pub(crate) fn backward(&self, tr: &Trace, dlogits: &[f64], grad: &mut [f64]) {
        let l = Layout::new(&self.spec);
        let p = &self.params;
        let mut denc = if self.spec.head == Head::ReluFc40 {
            let mut d = vec![0.0; l.hidden];
            for (i, &g) in dlogits.iter().enumerate() {
                grad[l.b2 + i] += g;
                let w = &p[l.w2 + i * l.hidden..][..l.hidden];
                let gw = &mut grad[l.w2 + i * l.hidden..][..l.hidden];
                for j in 0..l.hidden {
                    gw[j] += g * tr.enc[j];
                    d[j] += g * w[j];
                }
            }
            d
        } else {
            dlogits.to_vec()
        };
        if !matches!(self.spec.head, Head::Fc40 | Head::Fc128) {
            for (d, &z) in denc.iter_mut().zip(&tr.z1) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let dz1 = denc;
        let mut dfeat = vec![0.0; l.feat];
        for (i, &g) in dz1.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[l.b1 + i] += g;
            let w = &p[l.w1 + i * l.feat..][..l.feat];
            let gw = &mut grad[l.w1 + i * l.feat..][..l.feat];
            for j in 0..l.feat {
                gw[j] += g * tr.feat[j];
                dfeat[j] += g * w[j];
            }
        }
        self.trunk_backward(&l, tr, &dfeat, grad);
    }

    fn trunk_backward(&self, l: &Layout, tr: &Trace, dfeat: &[f64], grad: &mut [f64]) {
        let s = &self.spec;
        let p = &self.params;
        let (c, t) = (s.channels, l.steps);
        let x = tr.input;
        match s.family {
            Family::LinearSoftmax => {}
            Family::ChannelwiseCnn => {
                let (f, k, bins) = (s.filters, s.kernel, s.pool_bins);
                let n = t - k + 1;
                let bo = c * f * k;
                for ch in 0..c {
                    let xc = &x[ch * t..(ch + 1) * t];
                    for fi in 0..f {
                        let u = ch * f + fi;
                        let z = &tr.z[u * n..(u + 1) * n];
                        for j in 0..bins {
                            let (a, b) = bin_range(j, n, bins);
                            let g = dfeat[u * bins + j] / (b - a) as f64;
                            if g == 0.0 {
                                continue;
                            }
                            for i in a..b {
                                if z[i] > 0.0 {
                                    grad[bo + u] += g;
                                    let gw = &mut grad[u * k..(u + 1) * k];
                                    for (gk, &xv) in gw.iter_mut().zip(&xc[i..i + k]) {
                                        *gk += g * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Family::PooledCnn => {
                let (f, k, bins) = (s.filters, s.kernel, s.pool_bins);
                let n = t - k + 1;
                let bo = f * c * k;
                let mut dz = vec![0.0; n];
                for fi in 0..f {
                    let z = &tr.z[fi * n..(fi + 1) * n];
                    for j in 0..bins {
                        let (a, b) = bin_range(j, n, bins);
                        let g = dfeat[fi * bins + j] / (b - a) as f64;
                        for i in a..b {
                            dz[i] = if z[i] > 0.0 { g } else { 0.0 };
                        }
                    }
                    grad[bo + fi] += dz.iter().sum::<f64>();
                    for ch in 0..c {
                        let xc = &x[ch * t..(ch + 1) * t];
                        let gw = &mut grad[(fi * c + ch) * k..][..k];
                        for (kk, gk) in gw.iter_mut().enumerate() {
                            *gk += dot(&dz, &xc[kk..kk + n]);
                        }
                    }
                }
            }
            Family::RecurrentEncoder => {
                let h = s.encoder_dim;
                let (wx, wh, b) = (0, 4 * h * c, 4 * h * c + 4 * h * h);
                let xt = transpose(x, c, t);
                let mut dh = dfeat.to_vec();
                let mut dc = vec![0.0; h];
                let mut da = vec![0.0; 4 * h];
                for step in (0..t).rev() {
                    let gates = &tr.z[step * 4 * h..(step + 1) * 4 * h];
                    let cp = &tr.cells[step * h..(step + 1) * h];
                    let cn = &tr.cells[(step + 1) * h..(step + 2) * h];
                    let hp = &tr.hiddens[step * h..(step + 1) * h];
                    for j in 0..h {
                        let (i, fg, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                        let tc = cn[j].tanh();
                        let d_o = dh[j] * tc;
                        dc[j] += dh[j] * o * (1.0 - tc * tc);
                        da[j] = dc[j] * g * i * (1.0 - i);
                        da[h + j] = dc[j] * cp[j] * fg * (1.0 - fg);
                        da[2 * h + j] = dc[j] * i * (1.0 - g * g);
                        da[3 * h + j] = d_o * o * (1.0 - o);
                        dc[j] *= fg;
                    }
                    let xs = &xt[step * c..(step + 1) * c];
                    dh.fill(0.0);
                    for (r, &g) in da.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        grad[b + r] += g;
                        for (gw, &xv) in grad[wx + r * c..][..c].iter_mut().zip(xs) {
                            *gw += g * xv;
                        }
                        let w = &p[wh + r * h..][..h];
                        let gw = &mut grad[wh + r * h..][..h];
                        for j in 0..h {
                            gw[j] += g * hp[j];
                            dh[j] += g * w[j];
                        }
                    }
                }
            }
        }
    }

    /// Cross-entropy loss and predicted index for one prepared input, adding
    /// the parameter gradient into `grad`.
    pub(crate) fn loss_grad(&self, input: &[f64], label: usize, grad: &mut [f64]) -> (f64, usize) {
        let tr = self.trace(input);
        let (loss, dlogits) = cross_entropy(&tr.logits, label);
        self.backward(&tr, &dlogits, grad);
        (loss, argmax(&tr.logits))
    }

    /// Cross-entropy loss of one segment and its gradient with respect to
    /// every parameter.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, label: usize) -> Result<(f64, Vec<f64>)> {
        if label >= self.output_dim() {
            return Err(Error::Data(format!("label {label} out of range for {} outputs", self.output_dim())));
        }
        let input = self.prepare(x)?;
        let mut grad = vec![0.0; self.n_params()];
        let (loss, _) = self.loss_grad(&input, label, &mut grad);
        Ok((loss, grad))
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.trace(&self.prepare(x)?).logits)
    }

    /// Activation at the encoder/classifier boundary.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.trace(&self.prepare(x)?).enc)
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn small(family: Family, head: Head) -> ModelSpec {
        let mut s = ModelSpec::new(family, 8, 32, 4).with_head(head).with_downsample(1).with_encoder_dim(6);
        if matches!(family, Family::ChannelwiseCnn | Family::PooledCnn) {
            s.filters = 3;
            s.kernel = 5;
            s.pool_bins = 3;
        }
        s
    }

    fn random_input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream(seed, &[]);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn loss(net: &Network, x: &[f64], label: usize) -> f64 {
        cross_entropy(&net.trace(x).logits, label).0
    }

    /// Central finite differences against the analytic gradient.
    fn check(family: Family, head: Head) {
        let spec = small(family, head);
        let mut net = Network::build(spec.clone(), 3).unwrap();
        // nonzero conv biases so ReLU kinks are not hit exactly
        for v in net.params.iter_mut() {
            if *v == 0.0 {
                *v = 0.05;
            }
        }
        let x = random_input(11, spec.channels * spec.steps());
        let label = 2;
        let mut grad = vec![0.0; net.n_params()];
        net.loss_grad(&x, label, &mut grad);
        let stride = (net.n_params() / 400).max(1);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..net.n_params()).step_by(stride) {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = loss(&net, &x, label);
            net.params[i] = orig - h;
            let down = loss(&net, &x, label);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "{family:?}/{head:?}: worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for family in Family::ALL {
            for head in [Head::Fc40, Head::Fc40Relu, Head::Fc128, Head::ReluOnly, Head::ReluFc40] {
                check(family, head);
            }
        }
    }

    #[test]
    fn parameter_counts() {
        let lin = Network::build(ModelSpec::new(Family::LinearSoftmax, 128, 440, 40), 0).unwrap();
        assert_eq!(lin.n_params(), 128 * 440 * 40 + 40);
        let lstm = Network::build(ModelSpec::new(Family::RecurrentEncoder, 16, 440, 40), 0).unwrap();
        assert_eq!(lstm.encoding_dim(), 128);
        assert_eq!(lstm.output_dim(), 40);
        let lstm2 = Network::build(ModelSpec::new(Family::RecurrentEncoder, 16, 440, 40).with_head(Head::Fc40), 0).unwrap();
        assert_eq!(lstm2.encoding_dim(), 40);
    }

    #[test]
    fn zero_input_gives_output_bias() {
        let spec = ModelSpec::new(Family::ChannelwiseCnn, 4, 64, 5);
        let net = Network::build(spec, 1).unwrap();
        let logits = net.logits(Array2::zeros((4, 64)).view()).unwrap();
        let l = Layout::new(net.spec());
        assert_eq!(logits, net.params()[l.b1..l.b1 + 5].to_vec());

        let net = Network::build(ModelSpec::new(Family::LinearSoftmax, 3, 10, 4), 1).unwrap();
        let enc = net.encode(Array2::zeros((3, 10)).view()).unwrap();
        assert_eq!(enc, net.params()[30 * 4..].to_vec());
    }

    #[test]
    fn softmax_properties() {
        let z = random_input(5, 40);
        let p = softmax(&z);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.0).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn spec_errors() {
        let bad = ModelSpec::new(Family::RecurrentEncoder, 4, 40, 40).with_head(Head::Fc128).with_encoder_dim(8);
        assert!(matches!(Network::build(bad, 0), Err(Error::Spec(_))));
        let bad = ModelSpec::new(Family::PooledCnn, 4, 40, 4).with_downsample(0);
        assert!(matches!(Network::build(bad, 0), Err(Error::Spec(_))));
        let net = Network::build(ModelSpec::new(Family::PooledCnn, 4, 40, 4), 0).unwrap();
        assert!(matches!(net.logits(Array2::zeros((3, 40)).view()), Err(Error::Spec(_))));
    }

    #[test]
    fn downsampling_averages_blocks() {
        let net = Network::build(ModelSpec::new(Family::LinearSoftmax, 1, 9, 2).with_downsample(4), 0).unwrap();
        let x = Array2::from_shape_vec((1, 9), (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(net.prepare(x.view()).unwrap(), vec![1.5, 5.5]);
    }
}
