//! Adam over flat per-Gaussian parameter blocks.

/// First and second moment estimates for `n · stride` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    stride: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, stride: usize, eps: f64) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps, stride, m: vec![0.0; n * stride], v: vec![0.0; n * stride] }
    }

    pub fn len(&self) -> usize {
        self.m.len() / self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update at 1-based step `t`. With a gate, entry `i` scales the
    /// update of block `i`; blocks with gate 0 are skipped entirely, moments
    /// included.
    pub fn step(&mut self, params: &mut [f32], grads: &[f64], lr: f64, t: u64, gate: Option<&[f64]>) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (b, block) in params.chunks_mut(self.stride).enumerate() {
            let g = gate.map_or(1.0, |g| g[b]);
            if g == 0.0 {
                continue;
            }
            for (k, p) in block.iter_mut().enumerate() {
                let j = b * self.stride + k;
                let grad = grads[j];
                self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * grad;
                self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = self.m[j] / bc1;
                let v_hat = self.v[j] / bc2;
                *p = (*p as f64 - lr * g * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
    }

    /// Reorders and extends the moments after densification: output block
    /// `i` takes the moments of input block `source[i]`, or zeros for `None`.
    pub fn remap(&mut self, source: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; source.len() * s];
        let mut v = vec![0.0; source.len() * s];
        for (i, src) in source.iter().enumerate() {
            if let Some(j) = *src {
                m[i * s..(i + 1) * s].copy_from_slice(&self.m[j * s..(j + 1) * s]);
                v[i * s..(i + 1) * s].copy_from_slice(&self.v[j * s..(j + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// Exponential interpolation from `lr0` at step 0 to `lr1` at `steps − 1`.
pub fn exp_decay(lr0: f64, lr1: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return lr0;
    }
    let f = step.min(steps - 1) as f64 / (steps - 1) as f64;
    lr0 * (lr1 / lr0).powf(f)
}
