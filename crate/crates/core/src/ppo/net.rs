//! Small tanh MLPs with explicit backpropagation, an Adam optimizer, and a
//! versioned flat-binary checkpoint format. No autograd framework: the
//! nets here are a few thousand parameters and the gradients are hand
//! derived.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"CAMUNET1";
const CHECKPOINT_VERSION: u32 = 1;

/// Fully connected network: tanh on hidden layers, linear output.
/// Parameters are stored flat, layer by layer (row-major W, then b).
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    grads: Vec<f64>,
}

/// Post-activation values cached by a forward pass, for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("nonempty trace")
    }
}

impl Mlp {
    /// Uniform Xavier initialization, deterministic per stream.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(count);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push((rng.random::<f64>() * 2.0 - 1.0) * limit);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            grads: vec![0.0; params.len()],
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = self.forward_trace(x);
        trace.activations.pop().expect("nonempty trace")
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.sizes[0], "input size mismatch");
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_vec());
        let layers = self.layer_count();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = self.layer_offset(l);
            let w = &self.params[base..base + n_in * n_out];
            let b = &self.params[base + n_in * n_out..base + n_in * n_out + n_out];
            let a_in = &activations[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z: f64 = b[o] + row.iter().zip(a_in).map(|(wi, ai)| wi * ai).sum::<f64>();
                out.push(if l < layers - 1 { z.tanh() } else { z });
            }
            activations.push(out);
        }
        Trace { activations }
    }

    /// Accumulates parameter gradients for `d(loss)/d(output) = dout` into
    /// the internal gradient buffer and returns d(loss)/d(input).
    pub fn backward(&mut self, trace: &Trace, dout: &[f64]) -> Vec<f64> {
        let layers = self.layer_count();
        assert_eq!(dout.len(), self.sizes[layers], "output grad size mismatch");
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = self.layer_offset(l);
            // hidden layers carry tanh; the output layer is linear
            if l < layers - 1 {
                let a_out = &trace.activations[l + 1];
                for (d, &a) in delta.iter_mut().zip(a_out) {
                    *d *= 1.0 - a * a;
                }
            }
            let a_in = &trace.activations[l];
            {
                let (w_grad, b_grad) = self.grads[base..base + n_in * n_out + n_out]
                    .split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    for (g, &ai) in w_grad[o * n_in..(o + 1) * n_in].iter_mut().zip(a_in) {
                        *g += d * ai;
                    }
                    b_grad[o] += d;
                }
            }
            let w = &self.params[base..base + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                for (p, &wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for &p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Serialize("bad net checkpoint magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Serialize(format!(
                "unsupported net checkpoint version {version}"
            )));
        }
        r.read_exact(&mut u32buf)?;
        let n_sizes = u32::from_le_bytes(u32buf) as usize;
        if !(2..=16).contains(&n_sizes) {
            return Err(Error::Serialize(format!("implausible layer count {n_sizes}")));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            r.read_exact(&mut u32buf)?;
            sizes.push(u32::from_le_bytes(u32buf) as usize);
        }
        let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = Vec::with_capacity(count);
        let mut f64buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut f64buf)?;
            params.push(f64::from_le_bytes(f64buf));
        }
        Ok(Self {
            sizes,
            grads: vec![0.0; params.len()],
            params,
        })
    }
}

/// Plain Adam. Holds first/second moment buffers matching one net.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One descent step along `grads` (pass loss gradients; negate for
    /// ascent).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1c;
            let v_hat = self.v[i] / b2c;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_net() -> Mlp {
        let mut stream = rng::stream(7, &[rng::stage::PPO, 0]);
        Mlp::new(&[3, 5, 2], &mut stream)
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = tiny_net();
        let y = net.forward(&[0.1, -0.2, 0.3]);
        assert_eq!(y.len(), 2);
        let y2 = tiny_net().forward(&[0.1, -0.2, 0.3]);
        assert_eq!(y, y2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = tiny_net();
        let x = [0.4, -0.7, 0.2];
        // loss = sum of outputs, so dout = ones
        let trace = net.forward_trace(&x);
        net.zero_grads();
        net.backward(&trace, &[1.0, 1.0]);
        let analytic = net.grads().to_vec();

        let h = 1e-6;
        for p in 0..net.param_count() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let up: f64 = net.forward(&x).iter().sum();
            net.params_mut()[p] = orig - h;
            let down: f64 = net.forward(&x).iter().sum();
            net.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (analytic[p] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "param {p}: {} vs {fd}",
                analytic[p]
            );
        }
    }

    #[test]
    fn backward_input_gradient_matches_fd() {
        let mut net = tiny_net();
        let x = [0.4, -0.7, 0.2];
        let trace = net.forward_trace(&x);
        let din = net.backward(&trace, &[0.3, -1.1]);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let f = |v: &[f64]| {
                let y = net.forward(v);
                0.3 * y[0] - 1.1 * y[1]
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((din[i] - fd).abs() < 1e-6, "input {i}: {} vs {fd}", din[i]);
        }
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        let mut params = vec![2.0, -3.0];
        let mut opt = Adam::new(0.05, 2);
        for _ in 0..500 {
            let grads: Vec<f64> = params.iter().map(|&p| 2.0 * p).collect();
            opt.step(&mut params, &grads);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-2), "{params:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = tiny_net();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let loaded = Mlp::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.sizes(), net.sizes());
        assert_eq!(loaded.params(), net.params());

        let mut corrupted = buf.clone();
        corrupted[0] = b'X';
        assert!(Mlp::read_from(&mut corrupted.as_slice()).is_err());
    }
}
