//! Multilayer perceptrons with hand-written reverse mode, the four policy
//! networks, diagonal Gaussian helpers, Adam, and the checkpoint format.
//!
//! Batches are row-major: one sample per row.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::gait::{COMMAND_DIM, GAIT_DESCRIPTOR_DIM};
use crate::model::NUM_JOINTS;
use crate::obsbuild::{CRITIC_DIM, HISTORY_DIM};

pub const LATENT_DIM: usize = 32;
pub const VELOCITY_DIM: usize = 3;
pub const ACTION_DIM: usize = NUM_JOINTS;
pub const ACTOR_INPUT_DIM: usize = LATENT_DIM + VELOCITY_DIM + COMMAND_DIM + GAIT_DESCRIPTOR_DIM;
pub const POLICY_HIDDEN: [usize; 3] = [256, 128, 64];
pub const CRITIC_HIDDEN: [usize; 3] = [512, 256, 128];

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// ELU derivative from the activation value: exp(z) = elu(z) + 1 for z < 0.
fn elu_grad_from_output(y: f64) -> f64 {
    if y >= 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

impl OutputActivation {
    fn code(self) -> u8 {
        match self {
            OutputActivation::Identity => 0,
            OutputActivation::Tanh => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputActivation::Identity),
            1 => Some(OutputActivation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected network with ELU hidden layers. `weights[l]` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub output: OutputActivation,
}

/// Values cached by [`Mlp::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()])
    }
}

impl Mlp {
    pub fn zeros(dims: &[usize], output: OutputActivation) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "invalid layer dims {dims:?}");
        Mlp {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
            output,
        }
    }

    /// Orthogonal weights scaled by `hidden_gain` (last layer `output_gain`), zero biases.
    pub fn orthogonal<R: Rng>(dims: &[usize], output: OutputActivation, hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims, output);
        let last = net.weights.len() - 1;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let gain = if l == last { output_gain } else { hidden_gain };
            *w = orthogonal_matrix(w.nrows(), w.ncols(), rng) * gain;
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite())) && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()])
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
    }

    fn affine(&self, l: usize, x: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.weights[l].ncols(), "layer {l} input dimension");
        let mut z = self.biases[l].broadcast((x.nrows(), self.biases[l].len())).expect("bias row").to_owned();
        general_mat_mul(1.0, x, &self.weights[l].t(), 1.0, &mut z);
        z
    }

    fn activate_output(&self, z: &mut Array2<f64>) {
        if self.output == OutputActivation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut a = self.affine(0, &x);
        for l in 1..=last {
            a.mapv_inplace(elu);
            a = self.affine(l, &a.view());
        }
        self.activate_output(&mut a);
        a
    }

    pub fn forward_one(&self, x: &[f64]) -> Array1<f64> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("contiguous input");
        self.forward(x).row(0).to_owned()
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Tape {
        let n = self.weights.len();
        let mut inputs = Vec::with_capacity(n);
        let mut a = x.to_owned();
        for l in 0..n {
            let mut z = self.affine(l, &a.view());
            if l + 1 < n {
                z.mapv_inplace(elu);
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        self.activate_output(&mut a);
        Tape { inputs, output: a }
    }

    /// Accumulate parameter gradients into `grads` and return the input gradient.
    pub fn backward(&self, tape: &Tape, grad_out: ArrayView2<f64>, grads: &mut MlpGrads) -> Array2<f64> {
        self.backward_impl(tape, grad_out, grads, true).expect("input gradient requested")
    }

    /// [`Mlp::backward`] without the input gradient.
    pub fn backward_params(&self, tape: &Tape, grad_out: ArrayView2<f64>, grads: &mut MlpGrads) {
        self.backward_impl(tape, grad_out, grads, false);
    }

    fn backward_impl(&self, tape: &Tape, grad_out: ArrayView2<f64>, grads: &mut MlpGrads, input_grad: bool) -> Option<Array2<f64>> {
        let mut g = grad_out.to_owned();
        if self.output == OutputActivation::Tanh {
            g.zip_mut_with(&tape.output, |gi, y| *gi *= 1.0 - y * y);
        }
        for l in (0..self.weights.len()).rev() {
            general_mat_mul(1.0, &g.t(), &tape.inputs[l], 1.0, &mut grads.weights[l]);
            grads.biases[l] += &g.sum_axis(Axis(0));
            if l == 0 && !input_grad {
                return None;
            }
            let mut gx = g.dot(&self.weights[l]);
            if l > 0 {
                gx.zip_mut_with(&tape.inputs[l], |gi, y| *gi *= elu_grad_from_output(*y));
            }
            g = gx;
        }
        Some(g)
    }
}

fn orthogonal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let gauss = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| if rows >= cols { q[(i, j)] } else { q[(j, i)] })
}

/// Layer sizes of the four networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleSpec {
    pub history_dim: usize,
    pub critic_dim: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl BundleSpec {
    /// Layer widths of each network, in [`NetworkBundle::networks`] order.
    pub fn layer_dims(&self) -> [(&'static str, Vec<usize>); 4] {
        [
            ("encoder", chain(self.history_dim, &self.policy_hidden, LATENT_DIM)),
            ("estimator", chain(self.history_dim, &self.policy_hidden, VELOCITY_DIM)),
            ("actor", chain(ACTOR_INPUT_DIM, &self.policy_hidden, ACTION_DIM)),
            ("critic", chain(self.critic_dim, &self.critic_hidden, 1)),
        ]
    }
}

impl Default for BundleSpec {
    fn default() -> Self {
        BundleSpec { history_dim: HISTORY_DIM, critic_dim: CRITIC_DIM, policy_hidden: POLICY_HIDDEN.to_vec(), critic_hidden: CRITIC_HIDDEN.to_vec() }
    }
}

fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

/// History encoder, velocity estimator, actor, critic and the action log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBundle {
    pub encoder: Mlp,
    pub estimator: Mlp,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Array1<f64>,
}

/// Batched policy outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub latent: Array2<f64>,
    pub velocity: Array2<f64>,
    pub mean: Array2<f64>,
    pub std: Array1<f64>,
}

impl NetworkBundle {
    pub fn new<R: Rng>(spec: &BundleSpec, rng: &mut R) -> Self {
        let gain = std::f64::consts::SQRT_2;
        let mut bundle = NetworkBundle {
            encoder: Mlp::orthogonal(&chain(spec.history_dim, &spec.policy_hidden, LATENT_DIM), OutputActivation::Identity, gain, gain, rng),
            estimator: Mlp::orthogonal(&chain(spec.history_dim, &spec.policy_hidden, VELOCITY_DIM), OutputActivation::Identity, gain, 1.0, rng),
            actor: Mlp::orthogonal(&chain(ACTOR_INPUT_DIM, &spec.policy_hidden, ACTION_DIM), OutputActivation::Tanh, gain, 0.01, rng),
            critic: Mlp::orthogonal(&chain(spec.critic_dim, &spec.critic_hidden, 1), OutputActivation::Identity, gain, 1.0, rng),
            log_std: Array1::zeros(ACTION_DIM),
        };
        bundle.round_to_f32();
        bundle
    }

    pub fn networks(&self) -> [(&'static str, &Mlp); 4] {
        [("encoder", &self.encoder), ("estimator", &self.estimator), ("actor", &self.actor), ("critic", &self.critic)]
    }

    /// Check every layer width against `spec`, naming the first one that disagrees.
    pub fn check_layout(&self, spec: &BundleSpec) -> Result<(), String> {
        for ((name, net), (_, want)) in self.networks().into_iter().zip(spec.layer_dims()) {
            let have = &net.dims;
            if have.len() != want.len() {
                return Err(format!("{name} depth: checkpoint has {} layers, expected {}", have.len() - 1, want.len() - 1));
            }
            for (i, (h, w)) in have.iter().zip(&want).enumerate() {
                if h != w {
                    let what = match i {
                        0 => "input dimension".to_string(),
                        i if i == want.len() - 1 => "output dimension".to_string(),
                        i => format!("hidden layer {i} width"),
                    };
                    return Err(format!("{name} {what}: checkpoint {h}, expected {w}"));
                }
            }
        }
        if self.log_std.len() != ACTION_DIM {
            return Err(format!("action log-std length: checkpoint {}, expected {ACTION_DIM}", self.log_std.len()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.networks().iter().map(|(_, n)| n.num_params()).sum::<usize>() + self.log_std.len()
    }

    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|(_, n)| n.is_finite()) && self.log_std.iter().all(|x| x.is_finite())
    }

    /// Round every parameter to the nearest f32 so checkpoints are exact.
    pub fn round_to_f32(&mut self) {
        for slice in self.param_slices_mut() {
            slice.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Every parameter buffer in checkpoint order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.encoder.slices_mut());
        out.extend(self.estimator.slices_mut());
        out.extend(self.actor.slices_mut());
        out.extend(self.critic.slices_mut());
        out.push(self.log_std.as_slice_mut().unwrap());
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.encoder.slices());
        out.extend(self.estimator.slices());
        out.extend(self.actor.slices());
        out.extend(self.critic.slices());
        out.push(self.log_std.as_slice().unwrap());
        out
    }

    pub fn std(&self) -> Array1<f64> {
        self.log_std.mapv(f64::exp)
    }

    pub fn policy_forward(&self, history: ArrayView2<f64>, command: ArrayView2<f64>, gait: ArrayView2<f64>) -> PolicyOutput {
        let latent = self.encoder.forward(history);
        let velocity = self.estimator.forward(history);
        let input = actor_input(&latent.view(), &velocity.view(), &command, &gait);
        let mean = self.actor.forward(input.view());
        PolicyOutput { latent, velocity, mean, std: self.std() }
    }

    pub fn critic_forward(&self, critic_input: ArrayView2<f64>) -> Array1<f64> {
        self.critic.forward(critic_input).column(0).to_owned()
    }
}

/// `[h_t, v̂_t, c_t, g_t]`, one row per sample.
pub fn actor_input(latent: &ArrayView2<f64>, velocity: &ArrayView2<f64>, command: &ArrayView2<f64>, gait: &ArrayView2<f64>) -> Array2<f64> {
    let n = latent.nrows();
    let mut out = Array2::zeros((n, ACTOR_INPUT_DIM));
    let mut at = 0;
    for block in [latent, velocity, command, gait] {
        assert_eq!(block.nrows(), n, "actor input batch size");
        out.slice_mut(s![.., at..at + block.ncols()]).assign(block);
        at += block.ncols();
    }
    assert_eq!(at, ACTOR_INPUT_DIM, "actor input width");
    out
}

/// Gradients for every bundle parameter, same layout as the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrads {
    pub encoder: MlpGrads,
    pub estimator: MlpGrads,
    pub actor: MlpGrads,
    pub critic: MlpGrads,
    pub log_std: Array1<f64>,
}

impl BundleGrads {
    pub fn zeros_like(bundle: &NetworkBundle) -> Self {
        BundleGrads {
            encoder: MlpGrads::zeros_like(&bundle.encoder),
            estimator: MlpGrads::zeros_like(&bundle.estimator),
            actor: MlpGrads::zeros_like(&bundle.actor),
            critic: MlpGrads::zeros_like(&bundle.critic),
            log_std: Array1::zeros(bundle.log_std.len()),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.encoder.slices());
        out.extend(self.estimator.slices());
        out.extend(self.actor.slices());
        out.extend(self.critic.slices());
        out.push(self.log_std.as_slice().unwrap());
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        let mut all: Vec<&mut [f64]> = Vec::new();
        all.extend(self.encoder.slices_mut());
        all.extend(self.estimator.slices_mut());
        all.extend(self.actor.slices_mut());
        all.extend(self.critic.slices_mut());
        all.push(self.log_std.as_slice_mut().unwrap());
        for s in all {
            s.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// Scale down so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(x: ArrayView1<f64>, mean: ArrayView1<f64>, log_std: ArrayView1<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        let z = (x[i] - mean[i]) / log_std[i].exp();
        total -= 0.5 * z * z + log_std[i];
    }
    total - 0.5 * x.len() as f64 * LN_2PI
}

pub fn gaussian_entropy(log_std: ArrayView1<f64>) -> f64 {
    log_std.sum() + 0.5 * log_std.len() as f64 * (1.0 + LN_2PI)
}

pub fn gaussian_sample<R: Rng>(mean: ArrayView1<f64>, log_std: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(mean.len(), |i| {
        let z: f64 = rng.sample(StandardNormal);
        mean[i] + log_std[i].exp() * z
    })
}

/// Adam over a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ASK1CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint magic: expected \"ASK1CKPT\"")]
    Magic,
    #[error("checkpoint version: unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum: {0}")]
    Checksum(String),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint payload: {0}")]
    Payload(String),
}

impl CheckpointError {
    /// Name of the file section that failed.
    pub fn section(&self) -> &'static str {
        match self {
            CheckpointError::Io(_) => "io",
            CheckpointError::Magic => "magic",
            CheckpointError::Version { .. } => "version",
            CheckpointError::Checksum(_) => "checksum",
            CheckpointError::Header(_) => "header",
            CheckpointError::Payload(_) => "payload",
        }
    }
}

/// Serialize: magic, version, per-network headers, f32 LE payload, CRC32 of all preceding bytes.
pub fn checkpoint_bytes(bundle: &NetworkBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let nets = bundle.networks();
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (_, net) in nets {
        out.extend_from_slice(&(net.dims.len() as u32).to_le_bytes());
        for &d in &net.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(net.output.code());
    }
    out.extend_from_slice(&(bundle.log_std.len() as u32).to_le_bytes());
    for slice in bundle.param_slices() {
        for &x in slice {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let chunk = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(chunk)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<NetworkBundle, CheckpointError> {
    const MIN_LEN: usize = 8 + 4 + 4;
    if bytes.len() < MIN_LEN {
        return Err(CheckpointError::Checksum(format!("file truncated to {} bytes", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(CheckpointError::Checksum(format!("stored {stored:08x}, computed {actual:08x}")));
    }

    let mut r = Reader { bytes: body, at: 12 };
    let header = |what: &str| CheckpointError::Header(format!("unexpected end of data reading {what}"));
    let count = r.u32().ok_or_else(|| header("network count"))?;
    if count != 4 {
        return Err(CheckpointError::Header(format!("expected 4 networks, found {count}")));
    }
    let mut shells = Vec::with_capacity(4);
    for name in ["encoder", "estimator", "actor", "critic"] {
        let n_dims = r.u32().ok_or_else(|| header(name))? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(CheckpointError::Header(format!("{name}: implausible layer count {n_dims}")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            let d = r.u32().ok_or_else(|| header(name))? as usize;
            if d == 0 || d > 1 << 20 {
                return Err(CheckpointError::Header(format!("{name}: implausible layer width {d}")));
            }
            dims.push(d);
        }
        let code = r.take(1).ok_or_else(|| header(name))?[0];
        let output = OutputActivation::from_code(code).ok_or_else(|| CheckpointError::Header(format!("{name}: unknown output activation {code}")))?;
        shells.push(Mlp::zeros(&dims, output));
    }
    let std_len = r.u32().ok_or_else(|| header("log_std length"))? as usize;
    if std_len > 1 << 20 {
        return Err(CheckpointError::Header(format!("implausible log_std length {std_len}")));
    }
    let critic = shells.pop().unwrap();
    let actor = shells.pop().unwrap();
    let estimator = shells.pop().unwrap();
    let encoder = shells.pop().unwrap();
    let mut bundle = NetworkBundle { encoder, estimator, actor, critic, log_std: Array1::zeros(std_len) };

    let expected = bundle.num_params() * 4;
    let remaining = body.len() - r.at;
    if remaining != expected {
        return Err(CheckpointError::Payload(format!("expected {expected} bytes of parameters, found {remaining}")));
    }
    let mut floats = body[r.at..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for slice in bundle.param_slices_mut() {
        for x in slice.iter_mut() {
            *x = floats.next().unwrap();
        }
    }
    if !bundle.is_finite() {
        return Err(CheckpointError::Payload("non-finite parameter".into()));
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &NetworkBundle, path: &Path) -> Result<(), CheckpointError> {
    let bytes = checkpoint_bytes(bundle);
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkBundle, CheckpointError> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn elu_values() {
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert_eq!(elu(2.5), 2.5);
        assert_eq!(elu(0.0), 0.0);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[5, 7, 3], OutputActivation::Identity);
        let y = net.forward(array![[1.0, -2.0, 3.0, 0.5, 9.0]].view());
        assert_eq!(y, Array2::<f64>::zeros((1, 3)));
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let mut net = Mlp::zeros(&[3, 2], OutputActivation::Identity);
        net.weights[0] = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let x = array![[0.3, -0.7, 2.0]];
        let g = array![[1.5, -2.0]];
        let tape = net.forward_tape(x.view());
        let mut grads = MlpGrads::zeros_like(&net);
        let gx = net.backward(&tape, g.view(), &mut grads);
        assert_eq!(grads.weights[0], g.t().dot(&x));
        assert_eq!(grads.biases[0], array![1.5, -2.0]);
        assert_eq!(gx, g.dot(&net.weights[0]));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = Mlp::orthogonal(&[4, 8, 8, 2], OutputActivation::Tanh, 1.4, 1.0, &mut rng());
        let tape = net.forward_tape(Array2::from_elem((3, 4), 0.4).view());
        let mut grads = MlpGrads::zeros_like(&net);
        let gx = net.backward(&tape, Array2::zeros((3, 2)).view(), &mut grads);
        assert_eq!(grads, MlpGrads::zeros_like(&net));
        assert!(gx.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows_or_columns() {
        let mut r = rng();
        for (rows, cols) in [(8, 3), (3, 8), (5, 5)] {
            let w = orthogonal_matrix(rows, cols, &mut r);
            let gram = if rows >= cols { w.t().dot(&w) } else { w.dot(&w.t()) };
            let eye = Array2::<f64>::eye(rows.min(cols));
            assert!((&gram - &eye).iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn bundle_matches_table_two() {
        let b = NetworkBundle::new(&BundleSpec::default(), &mut rng());
        assert_eq!(b.encoder.dims, vec![150, 256, 128, 64, 32]);
        assert_eq!(b.estimator.dims, vec![150, 256, 128, 64, 3]);
        assert_eq!(b.actor.dims, vec![49, 256, 128, 64, 12]);
        assert_eq!(b.critic.dims, vec![248, 512, 256, 128, 1]);
        assert_eq!(b.actor.output, OutputActivation::Tanh);
        assert_eq!(b.log_std, Array1::<f64>::zeros(12));
        assert!(b.biases_are_zero());
    }

    impl NetworkBundle {
        fn biases_are_zero(&self) -> bool {
            self.networks().iter().all(|(_, n)| n.biases.iter().all(|b| b.iter().all(|x| *x == 0.0)))
        }
    }

    #[test]
    fn standard_normal_log_prob_at_mean() {
        let zeros = Array1::<f64>::zeros(12);
        let lp = gaussian_log_prob(zeros.view(), zeros.view(), zeros.view());
        assert!((lp - (-11.027_262_398_456_072)).abs() < 1e-12, "{lp}");
        assert!((lp + 6.0 * std::f64::consts::TAU.ln()).abs() < 1e-12);
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut adam = Adam::new(0.1);
        adam.step(vec![&mut p[..]], &[&[2.0, -3.0][..]]);
        assert!((p[0] - 0.9).abs() < 1e-9 && (p[1] + 0.9).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let b = NetworkBundle::new(&BundleSpec::default(), &mut rng());
        let mut g = BundleGrads::zeros_like(&b);
        g.log_std.fill(3.0);
        let before = g.clip_global_norm(1.0);
        assert!((before - (9.0f64 * 12.0).sqrt()).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_sections_fail_in_order() {
        let b = NetworkBundle::new(&BundleSpec::default(), &mut rng());
        let bytes = checkpoint_bytes(&b);
        assert_eq!(checkpoint_from_bytes(&bytes).unwrap(), b);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert_eq!(checkpoint_from_bytes(&bad_magic).unwrap_err().section(), "magic");

        let mut bad_version = bytes.clone();
        bad_version[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = checkpoint_from_bytes(&bad_version).unwrap_err();
        assert_eq!(err.section(), "version");
        assert!(err.to_string().contains("unsupported version 7"));

        let truncated = &bytes[..bytes.len() / 2];
        assert_eq!(checkpoint_from_bytes(truncated).unwrap_err().section(), "checksum");
        assert_eq!(checkpoint_from_bytes(&bytes[..5]).unwrap_err().section(), "checksum");

        let mut flipped = bytes.clone();
        let mid = bytes.len() - 100;
        flipped[mid] ^= 0x10;
        assert_eq!(checkpoint_from_bytes(&flipped).unwrap_err().section(), "checksum");
    }
}
