//! Declarative network construction: layer specs, shape validation, weight
//! initialization into named parameter stores, and tape-backed forward
//! execution. Named parameters are what make the decoder-to-generator
//! transfer checkable: two stores are transfer-compatible exactly when their
//! name sets and per-name shapes coincide.

mod presets;

pub use presets::{
    preset_mnist, preset_mnist_classifier, preset_mnist_with, preset_toy2d, preset_toy2d_with,
    Conditioning, Role, MNIST_CLASSES, MNIST_LATENT, TOY_LATENT,
};

use crate::autodiff::{BatchStats, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense { input: usize, output: usize },
    Conv { in_ch: usize, out_ch: usize },
    ConvTranspose { in_ch: usize, out_ch: usize },
    BatchNorm { features: usize },
    Activation { kind: ActKind, slope: f64 },
    Dropout { rate: f64 },
    Reshape { shape: Vec<usize> },
    Flatten,
    /// Concatenate a one-hot label block onto flat features (label
    /// conditioning; off by default in every preset).
    ConcatCond { classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
        }
    }
}

/// An ordered layer stack with declared input/output item shapes. Encoders
/// additionally carry a pair of dense heads applied to the trunk output.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// (mu head, log-variance head); both consume the trunk output.
    pub heads: Option<Box<(LayerSpec, LayerSpec)>>,
    /// Per-item shape, batch axis excluded.
    pub input_shape: Vec<usize>,
    /// Per-item shape of the trunk output (per-head shape when heads exist).
    pub output_shape: Vec<usize>,
}

impl NetworkSpec {
    /// Walk the layer stack symbolically, rejecting the first layer whose
    /// input shape disagrees with its predecessor's output.
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for layer in self.all_layers() {
            if !names.insert(layer.name.clone()) {
                return Err(Error::Config(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
        }
        let mut cur = self.input_shape.clone();
        for layer in &self.layers {
            cur = infer_output_shape(layer, &cur)?;
        }
        if let Some(heads) = &self.heads {
            let mu_out = infer_output_shape(&heads.0, &cur)?;
            let lv_out = infer_output_shape(&heads.1, &cur)?;
            if mu_out != lv_out {
                return Err(Error::Config(format!(
                    "encoder heads disagree: {mu_out:?} vs {lv_out:?}"
                )));
            }
            cur = mu_out;
        }
        if cur != self.output_shape {
            return Err(Error::Config(format!(
                "declared output shape {:?} but layers produce {:?}",
                self.output_shape, cur
            )));
        }
        Ok(())
    }

    fn all_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().chain(
            self.heads
                .iter()
                .flat_map(|h| [&h.0, &h.1]),
        )
    }
}

fn infer_output_shape(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let fail = |detail: String| {
        Err(Error::Config(format!(
            "layer `{}`: {detail}",
            layer.name
        )))
    };
    match &layer.kind {
        LayerKind::Dense { input: din, output } => {
            if input != [*din] {
                return fail(format!("expects flat input [{din}], got {input:?}"));
            }
            Ok(vec![*output])
        }
        LayerKind::Conv { in_ch, out_ch } => match input {
            [c, h, w] if c == in_ch && *h >= 3 && *w >= 3 => {
                Ok(vec![*out_ch, (h - 1) / 2 + 1, (w - 1) / 2 + 1])
            }
            other => fail(format!("expects [{in_ch}, h>=3, w>=3], got {other:?}")),
        },
        LayerKind::ConvTranspose { in_ch, out_ch } => match input {
            [c, h, w] if c == in_ch => Ok(vec![*out_ch, 2 * h, 2 * w]),
            other => fail(format!("expects [{in_ch}, h, w], got {other:?}")),
        },
        LayerKind::BatchNorm { features } => match input {
            [c] | [c, _, _] if c == features => Ok(input.to_vec()),
            other => fail(format!("expects {features} channels, got {other:?}")),
        },
        LayerKind::Activation { kind, .. } => {
            if *kind == ActKind::Softmax && input.len() != 1 {
                return fail(format!("softmax expects flat input, got {input:?}"));
            }
            Ok(input.to_vec())
        }
        LayerKind::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return fail(format!("dropout rate {rate} outside [0, 1)"));
            }
            Ok(input.to_vec())
        }
        LayerKind::Reshape { shape } => {
            let have: usize = input.iter().product();
            let want: usize = shape.iter().product();
            if have != want {
                return fail(format!("cannot reshape {input:?} into {shape:?}"));
            }
            Ok(shape.clone())
        }
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::ConcatCond { classes } => match input {
            [d] => Ok(vec![d + classes]),
            other => fail(format!("label concat expects flat input, got {other:?}")),
        },
    }
}

// ── parameter stores ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Whether the optimizer (and WGAN clipping) touches this entry.
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn suffix(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::Gamma => "gamma",
            ParamKind::Beta => "beta",
            ParamKind::RunningMean => "running_mean",
            ParamKind::RunningVar => "running_var",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "weight" => ParamKind::Weight,
            "bias" => ParamKind::Bias,
            "gamma" => ParamKind::Gamma,
            "beta" => ParamKind::Beta,
            "running_mean" => ParamKind::RunningMean,
            "running_var" => ParamKind::RunningVar,
            _ => return None,
        })
    }
}

pub fn param_name(layer: &str, kind: ParamKind) -> String {
    format!("{layer}.{}", kind.suffix())
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named parameter tensors of one network, ordered by name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, kind: ParamKind, value: Tensor<T>) {
        self.entries.insert(
            name,
            ParamEntry {
                kind,
                value,
                grad: None,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<T>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad = None;
        }
    }

    /// Add `g` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor<T>) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        match &mut entry.grad {
            Some(buf) => {
                for (b, &v) in buf.data_mut().iter_mut().zip(g.data()) {
                    *b += v;
                }
            }
            slot => *slot = Some(g.clone()),
        }
    }

    /// running <- (1 - momentum) * running + momentum * batch
    pub fn update_running_stats(&mut self, layer: &str, stats: &BatchStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        for (kind, batch) in [
            (ParamKind::RunningMean, &stats.mean),
            (ParamKind::RunningVar, &stats.var),
        ] {
            let name = param_name(layer, kind);
            let entry = self
                .entries
                .get_mut(&name)
                .unwrap_or_else(|| panic!("missing running stat `{name}`"));
            for (r, &b) in entry.value.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + momentum * b;
            }
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(
                |((na, ea), (nb, eb))| na == nb && ea.kind == eb.kind && ea.value.bit_eq(&eb.value),
            )
    }

    /// Largest |value| over learnable entries.
    pub fn max_abs_learnable(&self) -> T {
        self.entries
            .values()
            .filter(|e| e.kind.is_learnable())
            .fold(T::zero(), |acc, e| acc.max(e.value.max_abs()))
    }

    /// All differences that make `self` (source) incompatible as a transfer
    /// into `target`: missing entries, extra entries, and shape mismatches.
    /// Empty means transfer-compatible.
    pub fn compatibility_diff(&self, target: &Self) -> Vec<String> {
        let mut diffs = Vec::new();
        for (name, entry) in &self.entries {
            match target.entries.get(name) {
                None => diffs.push(format!("`{name}` exists in source but not in target")),
                Some(t) => {
                    if t.value.shape() != entry.value.shape() {
                        diffs.push(format!(
                            "`{name}` shapes differ: source {:?}, target {:?}",
                            entry.value.shape(),
                            t.value.shape()
                        ));
                    }
                }
            }
        }
        for name in target.entries.keys() {
            if !self.entries.contains_key(name) {
                diffs.push(format!("`{name}` exists in target but not in source"));
            }
        }
        diffs
    }

    /// Copy every entry of `source` into `self`, bitwise, after a full
    /// compatibility check. Running statistics transfer along with weights.
    pub fn transfer_from(&mut self, source: &Self) -> Result<()> {
        let diffs = source.compatibility_diff(self);
        if !diffs.is_empty() {
            return Err(Error::TransferMismatch { differences: diffs });
        }
        for (name, entry) in &source.entries {
            let dst = self.entries.get_mut(name).expect("checked above");
            dst.value = entry.value.clone();
            dst.grad = None;
        }
        Ok(())
    }
}

// ── building ────────────────────────────────────────────────────────────

/// Weight initialization policy for [`build_network`].
pub enum Init<'a, T> {
    /// Zero-centered normal draws with this standard deviation for weights;
    /// biases and batch-norm beta start at zero, gamma at one.
    Normal { std: f64 },
    /// Copy every parameter (including running statistics) from a
    /// transfer-compatible store.
    Transferred(&'a ParamStore<T>),
}

/// A validated, executable network. Parameters live in a separate
/// [`ParamStore`]; the network itself is immutable after construction.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }
}

/// Validate a spec and materialize its parameter store.
///
/// Only weight tensors consume randomness, in layer order, so two builds from
/// the same stream state are bitwise identical.
pub fn build_network<T: Real>(
    spec: NetworkSpec,
    init: Init<'_, T>,
    rng: &mut ChaCha8Rng,
) -> Result<(Network, ParamStore<T>)> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let layers: Vec<LayerSpec> = spec.all_layers().cloned().collect();
    let std = match &init {
        Init::Normal { std } => T::from_f64(*std),
        Init::Transferred(_) => T::zero(),
    };
    for layer in &layers {
        match &layer.kind {
            LayerKind::Dense { input, output } => {
                store.insert(
                    param_name(&layer.name, ParamKind::Weight),
                    ParamKind::Weight,
                    Tensor::randn(&[*input, *output], std, rng),
                );
                store.insert(
                    param_name(&layer.name, ParamKind::Bias),
                    ParamKind::Bias,
                    Tensor::zeros(&[*output]),
                );
            }
            LayerKind::Conv { in_ch, out_ch } => {
                store.insert(
                    param_name(&layer.name, ParamKind::Weight),
                    ParamKind::Weight,
                    Tensor::randn(&[*out_ch, *in_ch, 3, 3], std, rng),
                );
                store.insert(
                    param_name(&layer.name, ParamKind::Bias),
                    ParamKind::Bias,
                    Tensor::zeros(&[*out_ch]),
                );
            }
            LayerKind::ConvTranspose { in_ch, out_ch } => {
                store.insert(
                    param_name(&layer.name, ParamKind::Weight),
                    ParamKind::Weight,
                    Tensor::randn(&[*in_ch, *out_ch, 3, 3], std, rng),
                );
                store.insert(
                    param_name(&layer.name, ParamKind::Bias),
                    ParamKind::Bias,
                    Tensor::zeros(&[*out_ch]),
                );
            }
            LayerKind::BatchNorm { features } => {
                store.insert(
                    param_name(&layer.name, ParamKind::Gamma),
                    ParamKind::Gamma,
                    Tensor::filled(&[*features], T::one()),
                );
                store.insert(
                    param_name(&layer.name, ParamKind::Beta),
                    ParamKind::Beta,
                    Tensor::zeros(&[*features]),
                );
                store.insert(
                    param_name(&layer.name, ParamKind::RunningMean),
                    ParamKind::RunningMean,
                    Tensor::zeros(&[*features]),
                );
                store.insert(
                    param_name(&layer.name, ParamKind::RunningVar),
                    ParamKind::RunningVar,
                    Tensor::filled(&[*features], T::one()),
                );
            }
            LayerKind::Activation { .. }
            | LayerKind::Dropout { .. }
            | LayerKind::Reshape { .. }
            | LayerKind::Flatten
            | LayerKind::ConcatCond { .. } => {}
        }
    }
    if let Init::Transferred(source) = init {
        store.transfer_from(source)?;
    }
    Ok((Network { spec }, store))
}

// ── forward execution ───────────────────────────────────────────────────

/// Tape handles for one network's parameters, created by [`bind`]. Reuse one
/// binding for every forward of the same network within a step so gradients
/// of repeated applications accumulate on the same leaves.
pub struct Binding<T> {
    vars: BTreeMap<String, Var>,
    running: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Binding<T> {
    pub fn var(&self, layer: &str, kind: ParamKind) -> Var {
        let name = param_name(layer, kind);
        *self
            .vars
            .get(&name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    /// Pull accumulated tape gradients back into the store.
    pub fn accumulate_grads(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for (name, var) in &self.vars {
            if let Some(g) = tape.grad(*var) {
                store.accumulate_grad(name, g);
            }
        }
    }
}

/// Put every learnable parameter on the tape (as gradient leaves when
/// `with_grad`, constants otherwise) and snapshot running statistics.
pub fn bind<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, with_grad: bool) -> Binding<T> {
    let mut vars = BTreeMap::new();
    let mut running: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
    for (name, entry) in store.iter() {
        match entry.kind {
            ParamKind::RunningMean | ParamKind::RunningVar => {
                let layer = name
                    .rsplit_once('.')
                    .map(|(l, _)| l.to_string())
                    .expect("stat names carry a suffix");
                let slot = running.entry(layer).or_insert_with(|| (vec![], vec![]));
                if entry.kind == ParamKind::RunningMean {
                    slot.0 = entry.value.data().to_vec();
                } else {
                    slot.1 = entry.value.data().to_vec();
                }
            }
            _ => {
                let var = if with_grad {
                    tape.leaf(entry.value.clone())
                } else {
                    tape.constant(entry.value.clone())
                };
                vars.insert(name.clone(), var);
            }
        }
    }
    Binding { vars, running }
}

/// Per-forward context: train/eval switch, the dropout stream, and the
/// optional one-hot label block for conditioned presets.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
    pub cond: Option<Var>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            dropout_rng: None,
            cond: None,
        }
    }

    pub fn train(dropout_rng: &'a mut ChaCha8Rng) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            dropout_rng: Some(dropout_rng),
            cond: None,
        }
    }
}

#[derive(Debug)]
pub struct ForwardOut<T> {
    pub output: Var,
    /// (mu, log-variance) when the network has encoder heads.
    pub heads: Option<(Var, Var)>,
    /// Batch statistics per batch-norm layer, train mode only; fold into the
    /// store with [`ParamStore::update_running_stats`].
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

impl Network {
    /// Run the network on a batched input already on the tape.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        binding: &Binding<T>,
        input: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOut<T>> {
        let batch = {
            let shape = tape.value(input).shape();
            if shape.len() != self.spec.input_shape.len() + 1
                || shape[1..] != self.spec.input_shape[..]
            {
                return Err(Error::Dimension {
                    op: "forward",
                    detail: format!(
                        "input shape {shape:?} does not match declared item shape {:?}",
                        self.spec.input_shape
                    ),
                });
            }
            shape[0]
        };
        let mut bn_stats = Vec::new();
        let mut cur = input;
        for layer in &self.spec.layers {
            cur = self.apply_layer(tape, binding, layer, cur, batch, ctx, &mut bn_stats)?;
        }
        let (output, heads) = match &self.spec.heads {
            None => (cur, None),
            Some(heads) => {
                let mu = self.apply_layer(tape, binding, &heads.0, cur, batch, ctx, &mut bn_stats)?;
                let lv = self.apply_layer(tape, binding, &heads.1, cur, batch, ctx, &mut bn_stats)?;
                (mu, Some((mu, lv)))
            }
        };
        Ok(ForwardOut {
            output,
            heads,
            bn_stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_layer<T: Real>(
        &self,
        tape: &mut Tape<T>,
        binding: &Binding<T>,
        layer: &LayerSpec,
        cur: Var,
        batch: usize,
        ctx: &mut ForwardCtx<'_>,
        bn_stats: &mut Vec<(String, BatchStats<T>)>,
    ) -> Result<Var> {
        match &layer.kind {
            LayerKind::Dense { .. } => tape.dense(
                cur,
                binding.var(&layer.name, ParamKind::Weight),
                binding.var(&layer.name, ParamKind::Bias),
            ),
            LayerKind::Conv { .. } => tape.conv2d(
                cur,
                binding.var(&layer.name, ParamKind::Weight),
                binding.var(&layer.name, ParamKind::Bias),
            ),
            LayerKind::ConvTranspose { .. } => tape.conv_transpose2d(
                cur,
                binding.var(&layer.name, ParamKind::Weight),
                binding.var(&layer.name, ParamKind::Bias),
            ),
            LayerKind::BatchNorm { .. } => {
                let gamma = binding.var(&layer.name, ParamKind::Gamma);
                let beta = binding.var(&layer.name, ParamKind::Beta);
                match ctx.mode {
                    Mode::Train => {
                        let (out, stats) =
                            tape.batchnorm_train(cur, gamma, beta, T::from_f64(BN_EPS))?;
                        bn_stats.push((layer.name.clone(), stats));
                        Ok(out)
                    }
                    Mode::Eval => {
                        let (rm, rv) = binding
                            .running
                            .get(&layer.name)
                            .unwrap_or_else(|| panic!("no running stats for `{}`", layer.name));
                        tape.batchnorm_eval(cur, gamma, beta, rm, rv, T::from_f64(BN_EPS))
                    }
                }
            }
            LayerKind::Activation { kind, slope } => Ok(match kind {
                ActKind::Relu => tape.relu(cur),
                ActKind::LeakyRelu => tape.leaky_relu(cur, T::from_f64(*slope)),
                ActKind::Tanh => tape.tanh(cur),
                ActKind::Sigmoid => tape.sigmoid(cur),
                ActKind::Softmax => tape.softmax_rows(cur)?,
            }),
            LayerKind::Dropout { rate } => match (ctx.mode, &mut ctx.dropout_rng) {
                (Mode::Eval, _) => Ok(cur),
                (Mode::Train, Some(rng)) => tape.dropout(cur, *rate, Mode::Train, rng),
                (Mode::Train, None) => Err(Error::Contract(format!(
                    "layer `{}`: dropout in train mode needs an rng stream",
                    layer.name
                ))),
            },
            LayerKind::Reshape { shape } => {
                let mut full = vec![batch];
                full.extend_from_slice(shape);
                tape.reshape(cur, &full)
            }
            LayerKind::Flatten => {
                let numel: usize = tape.value(cur).shape()[1..].iter().product();
                tape.reshape(cur, &[batch, numel])
            }
            LayerKind::ConcatCond { classes } => {
                let cond = ctx.cond.ok_or_else(|| {
                    Error::Contract(format!(
                        "layer `{}`: conditioned network forward needs a label block",
                        layer.name
                    ))
                })?;
                if tape.value(cond).shape() != [batch, *classes] {
                    return Err(Error::Dimension {
                        op: "forward",
                        detail: format!(
                            "label block shape {:?}, expected [{batch}, {classes}]",
                            tape.value(cond).shape()
                        ),
                    });
                }
                tape.concat_cols(cur, cond)
            }
        }
    }
}

/// One-hot encode labels into a [batch, classes] tensor for conditioning.
pub fn one_hot<T: Real>(labels: &[u8], classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::Contract("one_hot of an empty label batch".into()));
    }
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(Error::Contract(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        data[i * classes + label as usize] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}
