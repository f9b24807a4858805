//! Dueling Q-network over multi-view depth encodings, with hand-written
//! backpropagation and the `DQN1` checkpoint format.
//!
//! Layout: a shared two-layer ReLU encoder runs on every view, the encoded
//! views are max-pooled, a ReLU trunk maps the pooled vector to `trunk`
//! features, and the trunk output is split evenly: the first half feeds the
//! scalar value head, the second half the per-action advantage head.
//! `Q = V + A - mean(A)`.

use std::path::Path;

use rand::Rng;

use super::StateEncoding;
use crate::error::{Error, Result};
use crate::geometry::ACTION_COUNT;
use crate::io::atomic_write;
use crate::par::Exec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DQN1";

const ENC1: usize = 0;
const ENC2: usize = 1;
const TRUNK: usize = 2;
const VALUE: usize = 3;
const ADV: usize = 4;
const LAYERS: usize = 5;

/// Affine map `y = W x + b`, `W` row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer { rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    fn he_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / cols as f64).sqrt();
        let weights = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Layer { rows, cols, weights, bias: vec![0.0; rows] }
    }

    fn forward(&self, x: &[f64], y: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        y.clear();
        y.extend(self.weights.chunks_exact(self.cols).zip(&self.bias).map(|(row, b)| dot(row, x) + b));
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// and, when requested, writes the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Layer, dx: Option<&mut Vec<f64>>) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let row = &mut grad.weights[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.cols, 0.0);
            for (r, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, w) in dx.iter_mut().zip(&self.weights[r * self.cols..(r + 1) * self.cols]) {
                    *d += g * w;
                }
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Trunk width; must be even.
    pub trunk: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::config("network widths must be positive"));
        }
        if self.trunk < 2 || !self.trunk.is_multiple_of(2) {
            return Err(Error::config("trunk width must be a positive even number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
}

/// Parameter gradients, shaped like the network layers.
pub type Gradients = Vec<Layer>;

/// Activations kept from the forward pass.
struct Cache {
    views: Vec<ViewCache>,
    pooled: Vec<f64>,
    argview: Vec<usize>,
    trunk: Vec<f64>,
    q: [f64; ACTION_COUNT],
}

struct ViewCache {
    a1: Vec<f64>,
    a2: Vec<f64>,
}

impl QNetwork {
    /// He-uniform hidden layers; value and advantage heads start at zero, so
    /// a fresh network predicts `Q = 0` everywhere.
    pub fn new<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let half = config.trunk / 2;
        let layers = vec![
            Layer::he_uniform(config.hidden1, config.input_dim, rng),
            Layer::he_uniform(config.hidden2, config.hidden1, rng),
            Layer::he_uniform(config.trunk, config.hidden2, rng),
            Layer::zeros(1, half),
            Layer::zeros(ACTION_COUNT, half),
        ];
        Ok(QNetwork { config, layers })
    }

    /// Same as [`QNetwork::new`] but with random heads as well.
    pub fn new_random_heads<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = QNetwork::new(config, rng)?;
        let half = config.trunk / 2;
        net.layers[VALUE] = Layer::he_uniform(1, half, rng);
        net.layers[ADV] = Layer::he_uniform(ACTION_COUNT, half, rng);
        Ok(net)
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[i];
                i += 1;
            }
        }
    }

    fn check_input(&self, s: &StateEncoding) -> Result<()> {
        if s.res * s.res != self.config.input_dim {
            return Err(Error::contract(format!(
                "state resolution {}x{} does not match network input {}",
                s.res, s.res, self.config.input_dim
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, s: &StateEncoding) -> Cache {
        let h2 = self.config.hidden2;
        let half = self.config.trunk / 2;
        let mut views = Vec::with_capacity(ACTION_COUNT);
        let mut pooled = vec![f64::NEG_INFINITY; h2];
        let mut argview = vec![0usize; h2];
        let mut x = Vec::with_capacity(self.config.input_dim);
        for v in 0..ACTION_COUNT {
            x.clear();
            x.extend(s.view(v).iter().map(|p| *p as f64));
            let mut a1 = Vec::new();
            self.layers[ENC1].forward(&x, &mut a1);
            relu_in_place(&mut a1);
            let mut a2 = Vec::new();
            self.layers[ENC2].forward(&a1, &mut a2);
            relu_in_place(&mut a2);
            for j in 0..h2 {
                // strict comparison keeps the lowest view index on ties
                if a2[j] > pooled[j] {
                    pooled[j] = a2[j];
                    argview[j] = v;
                }
            }
            views.push(ViewCache { a1, a2 });
        }
        let mut trunk = Vec::new();
        self.layers[TRUNK].forward(&pooled, &mut trunk);
        relu_in_place(&mut trunk);
        let mut value = Vec::new();
        self.layers[VALUE].forward(&trunk[..half], &mut value);
        let mut adv = Vec::new();
        self.layers[ADV].forward(&trunk[half..], &mut adv);
        let mean_adv = adv.iter().sum::<f64>() / ACTION_COUNT as f64;
        let mut q = [0.0; ACTION_COUNT];
        for (a, qa) in q.iter_mut().enumerate() {
            *qa = value[0] + adv[a] - mean_adv;
        }
        Cache { views, pooled, argview, trunk, q }
    }

    pub fn q_values(&self, s: &StateEncoding) -> Result<[f64; ACTION_COUNT]> {
        self.check_input(s)?;
        Ok(self.forward_cached(s).q)
    }

    fn backward(&self, s: &StateEncoding, cache: &Cache, dq: &[f64; ACTION_COUNT], grads: &mut Gradients) {
        let half = self.config.trunk / 2;
        let dvalue = [dq.iter().sum::<f64>()];
        let mean_dq = dvalue[0] / ACTION_COUNT as f64;
        let dadv: Vec<f64> = dq.iter().map(|g| g - mean_dq).collect();

        let mut dt_v = Vec::new();
        let mut dt_a = Vec::new();
        self.layers[VALUE].backward(&cache.trunk[..half], &dvalue, &mut grads[VALUE], Some(&mut dt_v));
        self.layers[ADV].backward(&cache.trunk[half..], &dadv, &mut grads[ADV], Some(&mut dt_a));
        let mut dtrunk: Vec<f64> = dt_v.into_iter().chain(dt_a).collect();
        for (d, t) in dtrunk.iter_mut().zip(&cache.trunk) {
            if *t <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dpooled = Vec::new();
        self.layers[TRUNK].backward(&cache.pooled, &dtrunk, &mut grads[TRUNK], Some(&mut dpooled));

        let h2 = self.config.hidden2;
        let mut x = Vec::with_capacity(self.config.input_dim);
        let mut da2 = vec![0.0; h2];
        let mut da1 = Vec::new();
        for (v, vc) in cache.views.iter().enumerate() {
            let mut any = false;
            for j in 0..h2 {
                da2[j] = if cache.argview[j] == v && vc.a2[j] > 0.0 { dpooled[j] } else { 0.0 };
                any |= da2[j] != 0.0;
            }
            if !any {
                continue;
            }
            self.layers[ENC2].backward(&vc.a1, &da2, &mut grads[ENC2], Some(&mut da1));
            for (d, a) in da1.iter_mut().zip(&vc.a1) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            x.clear();
            x.extend(s.view(v).iter().map(|p| *p as f64));
            self.layers[ENC1].backward(&x, &da1, &mut grads[ENC1], None);
        }
    }

    /// Mean squared TD error over a batch and its parameter gradient, with the
    /// targets held fixed. Per-sample work runs under `exec`; gradients are
    /// summed in batch order.
    pub fn loss_and_grad(
        &self,
        exec: Exec,
        states: &[&StateEncoding],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let b = states.len();
        if b == 0 || actions.len() != b || targets.len() != b {
            return Err(Error::contract("batch parts differ in length or are empty"));
        }
        for s in states {
            self.check_input(s)?;
        }
        if actions.iter().any(|a| *a >= ACTION_COUNT) {
            return Err(Error::contract("action index out of range"));
        }
        let per = exec.map(b, |i| {
            let cache = self.forward_cached(states[i]);
            let err = cache.q[actions[i]] - targets[i];
            let mut dq = [0.0; ACTION_COUNT];
            dq[actions[i]] = 2.0 * err / b as f64;
            let mut g = self.zero_grads();
            self.backward(states[i], &cache, &dq, &mut g);
            (err * err, g)
        });
        let mut total = self.zero_grads();
        let mut loss = 0.0;
        for (l, g) in per {
            loss += l;
            add_into(&mut total, &g);
        }
        Ok((loss / b as f64, total))
    }

    /// `theta -= lr * g`, after rescaling `g` to at most `clip` global norm.
    pub fn sgd_update(&mut self, grads: &Gradients, lr: f64, clip: f64) {
        let norm = grad_norm(grads);
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        for (l, g) in self.layers.iter_mut().zip(grads) {
            for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                *w -= lr * scale * gw;
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * scale * gb;
            }
        }
    }

    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.rows as u32).to_le_bytes());
            out.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for w in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&(*w as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode_checkpoint(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("checkpoint", m.to_string());
        if buf.len() < 8 || &buf[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut pos = 4;
        let u32_at = |pos: &mut usize| -> Result<u32> {
            let s = buf.get(*pos..*pos + 4).ok_or_else(|| bad("unexpected end of data"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(s.try_into().unwrap()))
        };
        let n = u32_at(&mut pos)? as usize;
        if n != LAYERS {
            return Err(bad(&format!("expected {LAYERS} layers, found {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = u32_at(&mut pos)? as usize;
            let cols = u32_at(&mut pos)? as usize;
            let count = rows.checked_mul(cols).and_then(|c| c.checked_add(rows)).ok_or_else(|| bad("size overflow"))?;
            let bytes = buf.get(pos..pos + 4 * count).ok_or_else(|| bad("unexpected end of data"))?;
            pos += 4 * count;
            let vals: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite parameter"));
            }
            let (w, b) = vals.split_at(rows * cols);
            layers.push(Layer { rows, cols, weights: w.to_vec(), bias: b.to_vec() });
        }
        if pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        let config = NetConfig {
            input_dim: layers[ENC1].cols,
            hidden1: layers[ENC1].rows,
            hidden2: layers[ENC2].rows,
            trunk: layers[TRUNK].rows,
        };
        config.validate()?;
        let half = config.trunk / 2;
        let consistent = layers[ENC2].cols == config.hidden1
            && layers[TRUNK].cols == config.hidden2
            && (layers[VALUE].rows, layers[VALUE].cols) == (1, half)
            && (layers[ADV].rows, layers[ADV].cols) == (ACTION_COUNT, half);
        if !consistent {
            return Err(bad("layer shapes do not form a dueling Q-network"));
        }
        Ok(QNetwork { config, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        QNetwork::decode_checkpoint(&crate::io::read_bytes(path)?)
    }
}

pub fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

fn add_into(acc: &mut Gradients, g: &Gradients) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.weights.iter_mut().zip(&b.weights) {
            *x += y;
        }
        for (x, y) in a.bias.iter_mut().zip(&b.bias) {
            *x += y;
        }
    }
}

pub fn grad_norm(g: &Gradients) -> f64 {
    g.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetConfig {
        NetConfig { input_dim: 16, hidden1: 12, hidden2: 8, trunk: 10 }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> StateEncoding {
        StateEncoding { res: 4, views: (0..ACTION_COUNT * 16).map(|_| rng.random::<f32>()).collect() }
    }

    #[test]
    fn fresh_network_predicts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetwork::new(small(), &mut rng).unwrap();
        let s = random_state(&mut rng);
        assert!(net.q_values(&s).unwrap().iter().all(|q| *q == 0.0));
    }

    #[test]
    fn value_bias_shifts_every_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = QNetwork::new_random_heads(small(), &mut rng).unwrap();
        let s = random_state(&mut rng);
        let q0 = net.q_values(&s).unwrap();
        net.layers[VALUE].bias[0] += 2.5;
        let q1 = net.q_values(&s).unwrap();
        for (a, b) in q0.iter().zip(&q1) {
            assert!((b - a - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = QNetwork::new_random_heads(small(), &mut rng).unwrap();
        let bytes = net.encode_checkpoint();
        let back = QNetwork::decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, net.config);
        for (a, b) in back.flat_params().iter().zip(net.flat_params()) {
            assert_eq!(*a, b as f32 as f64);
        }
        assert!(QNetwork::decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(QNetwork::decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = QNetwork::new(small(), &mut rng).unwrap();
        let s = StateEncoding { res: 3, views: vec![0.0; ACTION_COUNT * 9] };
        assert!(net.q_values(&s).is_err());
    }
}
