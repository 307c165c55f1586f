//! Differentiable stacked state-space models.
//!
//! A [`StackedModel`] is a list of layers (deep S4 or simplified S6 with an
//! input projection), an optional linear readout head, and a [`ParamStore`]
//! holding every parameter under a stable name (`layers.{l}.{field}`,
//! `head.w`, `head.b`). Forward passes build expression graphs, so the same
//! code path serves evaluation and training; adapters customize it through
//! the [`ParamNodes`] resolver and [`PrefixPlan`].

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::params::ParamStore;
use crate::rng::RngStream;
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    DeepS4,
    S6 { dt_rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// Stack of state-space layers with an optional readout head.
#[derive(Debug, Clone)]
pub struct StackedModel {
    /// Channel count D, shared by every layer.
    pub dim: usize,
    /// Hidden state dimension H per channel.
    pub state_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Number of output classes when a readout head is present.
    pub head_classes: Option<usize>,
    pub params: ParamStore,
}

pub fn layer_param(layer: usize, field: &str) -> String {
    format!("layers.{layer}.{field}")
}

/// Fields of a deep S4 layer, in initialization-draw order.
pub const DEEP_S4_FIELDS: &[&str] = &["a_diag", "b", "c", "log_dt", "h0", "w", "beta", "u"];
/// Fields of a simplified S6 layer, in initialization-draw order.
pub const S6_FIELDS: &[&str] =
    &["a", "w_b", "w_c", "w_dt_down", "w_dt_up", "beta_dt", "w_in", "h0"];

impl StackedModel {
    /// Randomly initialized deep S4 stack.
    ///
    /// Initialization: `a_diag[d][h] = -(h+1)`, `b` and `c` normal scaled by
    /// `1/sqrt(H)`, `log_dt` uniform in `[ln 1e-3, ln 1e-1]`, `w` normal
    /// scaled by `1/sqrt(D)`, `beta = 0`, `u = 1`, `h0 = 0`.
    pub fn deep_s4(
        num_layers: usize,
        dim: usize,
        state_dim: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<StackedModel> {
        let mut params = ParamStore::new();
        for l in 0..num_layers {
            let a = Tensor::from_vec(
                vec![dim, state_dim],
                (0..dim * state_dim)
                    .map(|i| -((i % state_dim) as f64 + 1.0))
                    .collect(),
            )?;
            params.insert(&layer_param(l, "a_diag"), a);
            let scale = 1.0 / (state_dim as f64).sqrt();
            params.insert(&layer_param(l, "b"), rng.normal(&[dim, state_dim], 0.0, scale)?);
            params.insert(&layer_param(l, "c"), rng.normal(&[dim, state_dim], 0.0, scale)?);
            params.insert(
                &layer_param(l, "log_dt"),
                rng.uniform(&[dim, 1], (1e-3f64).ln(), (1e-1f64).ln())?,
            );
            params.insert(&layer_param(l, "h0"), Tensor::zeros(&[dim, state_dim]));
            params.insert(
                &layer_param(l, "w"),
                rng.normal(&[dim, dim], 0.0, 1.0 / (dim as f64).sqrt())?,
            );
            params.insert(&layer_param(l, "beta"), Tensor::zeros(&[dim, 1]));
            params.insert(&layer_param(l, "u"), Tensor::ones(&[dim, 1]));
        }
        Ok(StackedModel {
            dim,
            state_dim,
            layers: vec![LayerSpec { kind: LayerKind::DeepS4, activation }; num_layers],
            head_classes: None,
            params,
        })
    }

    /// Randomly initialized stack of simplified S6 blocks (input projection
    /// followed by a selective scan).
    pub fn s6(
        num_layers: usize,
        dim: usize,
        state_dim: usize,
        dt_rank: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<StackedModel> {
        if dt_rank == 0 {
            return Err(TensorError::Invalid(
                "step-size low-rank factor requires rank >= 1".into(),
            ));
        }
        let mut params = ParamStore::new();
        for l in 0..num_layers {
            let a = Tensor::from_vec(
                vec![dim, state_dim],
                (0..dim * state_dim)
                    .map(|i| -((i % state_dim) as f64 + 1.0))
                    .collect(),
            )?;
            params.insert(&layer_param(l, "a"), a);
            let in_scale = 1.0 / (dim as f64).sqrt();
            params.insert(&layer_param(l, "w_b"), rng.normal(&[state_dim, dim], 0.0, in_scale)?);
            params.insert(&layer_param(l, "w_c"), rng.normal(&[state_dim, dim], 0.0, in_scale)?);
            params.insert(&layer_param(l, "w_dt_down"), rng.normal(&[dt_rank, dim], 0.0, in_scale)?);
            params.insert(
                &layer_param(l, "w_dt_up"),
                rng.normal(&[dim, dt_rank], 0.0, 1.0 / (dt_rank as f64).sqrt())?,
            );
            // Bias chosen so softplus lands near the drawn step size.
            let dt0 = rng.uniform(&[dim, 1], 1e-3, 1e-1)?;
            let beta_dt = Tensor::from_vec(
                vec![dim, 1],
                dt0.iter().map(|&v| (v.exp() - 1.0f64).ln()).collect(),
            )?;
            params.insert(&layer_param(l, "beta_dt"), beta_dt);
            params.insert(&layer_param(l, "w_in"), rng.normal(&[dim, dim], 0.0, in_scale)?);
            params.insert(&layer_param(l, "h0"), Tensor::zeros(&[dim, state_dim]));
        }
        Ok(StackedModel {
            dim,
            state_dim,
            layers: vec![LayerSpec { kind: LayerKind::S6 { dt_rank }, activation }; num_layers],
            head_classes: None,
            params,
        })
    }

    /// Attaches a linear readout head over the final token representation.
    pub fn with_head(mut self, classes: usize, rng: &mut RngStream) -> Result<StackedModel> {
        self.params
            .insert("head.w", rng.normal(&[classes, self.dim], 0.0, 1.0 / (self.dim as f64).sqrt())?);
        self.params.insert("head.b", Tensor::zeros(&[classes, 1]));
        self.head_classes = Some(classes);
        Ok(self)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total number of scalar parameters, the denominator for trainable
    /// percentages.
    pub fn total_params(&self) -> usize {
        self.params.total_elements()
    }

    /// Names of every parameter tensor of layer `l`, in field order.
    pub fn layer_fields(&self, l: usize) -> &'static [&'static str] {
        match self.layers[l].kind {
            LayerKind::DeepS4 => DEEP_S4_FIELDS,
            LayerKind::S6 { .. } => S6_FIELDS,
        }
    }
}

/// Maps parameter names to graph nodes during a forward pass. The default
/// implementation registers every parameter as trainable; adapters substitute
/// frozen constants, masked copies, or low-rank-augmented weights.
pub trait ParamNodes {
    fn node(&mut self, graph: &mut Graph, name: &str) -> Result<NodeId>;
}

/// Resolver over a plain store: every parameter in `trainable` (or all of
/// them, when `trainable` is `None`) becomes a gradient-carrying leaf.
pub struct BaseNodes<'a> {
    store: &'a ParamStore,
    trainable: Option<&'a BTreeSet<String>>,
    cache: BTreeMap<String, NodeId>,
}

impl<'a> BaseNodes<'a> {
    pub fn all_trainable(store: &'a ParamStore) -> Self {
        BaseNodes { store, trainable: None, cache: BTreeMap::new() }
    }

    pub fn with_trainable(store: &'a ParamStore, trainable: &'a BTreeSet<String>) -> Self {
        BaseNodes { store, trainable: Some(trainable), cache: BTreeMap::new() }
    }

    pub fn all_frozen(store: &'a ParamStore) -> Self {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        BaseNodes { store, trainable: Some(&EMPTY), cache: BTreeMap::new() }
    }
}

impl ParamNodes for BaseNodes<'_> {
    fn node(&mut self, graph: &mut Graph, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.cache.get(name) {
            return Ok(id);
        }
        let value = self.store.get(name)?.clone();
        let trainable = self.trainable.map_or(true, |t| t.contains(name));
        let id = if trainable { graph.param(name, value)? } else { graph.constant(value) };
        self.cache.insert(name.to_string(), id);
        Ok(id)
    }
}

/// How learnable prefixes are injected into the token stream.
pub enum PrefixPlan {
    None,
    /// Prepended once before the first layer; the suffix is sliced from the
    /// final outputs only.
    Prompt(NodeId),
    /// A fresh learnable prefix per layer; each layer's outputs are sliced
    /// back to the original length.
    PerLayer(Vec<NodeId>),
}

pub struct ForwardOutput {
    /// Per-token outputs of the final layer, `[D, N]`.
    pub tokens: NodeId,
    /// Head logits over the final token, `[K, 1]`, when a head is attached.
    pub logits: Option<NodeId>,
}

/// Constant one-vectors reused across time steps.
struct Ones {
    row_h: NodeId,
    col_h: NodeId,
    col_d: NodeId,
}

/// Runs the model over `x` (`[D, N]`, already a graph node) and returns the
/// final token outputs plus head logits.
pub fn forward(
    model: &StackedModel,
    graph: &mut Graph,
    resolver: &mut dyn ParamNodes,
    x: NodeId,
    prefix: &PrefixPlan,
) -> Result<ForwardOutput> {
    let (d, n) = graph.value(x).dims2("model input")?;
    if d != model.dim {
        return Err(TensorError::ShapeMismatch {
            op: "model input",
            lhs: vec![model.dim],
            rhs: vec![d, n],
        });
    }
    let ones = Ones {
        row_h: graph.constant(Tensor::ones(&[1, model.state_dim])),
        col_h: graph.constant(Tensor::ones(&[model.state_dim, 1])),
        col_d: graph.constant(Tensor::ones(&[model.dim, 1])),
    };

    let mut stream = match prefix {
        PrefixPlan::Prompt(p) => graph.concat(&[*p, x], 1)?,
        _ => x,
    };

    for (l, spec) in model.layers.iter().enumerate() {
        if let PrefixPlan::PerLayer(prefixes) = prefix {
            stream = graph.concat(&[prefixes[l], stream], 1)?;
        }
        stream = match spec.kind {
            LayerKind::DeepS4 => {
                deep_s4_layer(model, graph, resolver, l, spec.activation, stream, &ones)?
            }
            LayerKind::S6 { .. } => {
                s6_layer(model, graph, resolver, l, spec.activation, stream, &ones)?
            }
        };
        if let PrefixPlan::PerLayer(prefixes) = prefix {
            let m = graph.value(prefixes[l]).shape()[1];
            let cols = graph.value(stream).shape()[1];
            stream = graph.slice(stream, 1, m, cols - m)?;
        }
    }

    if let PrefixPlan::Prompt(p) = prefix {
        let m = graph.value(*p).shape()[1];
        let cols = graph.value(stream).shape()[1];
        stream = graph.slice(stream, 1, m, cols - m)?;
    }

    let logits = if model.head_classes.is_some() {
        let cols = graph.value(stream).shape()[1];
        let last = graph.slice(stream, 1, cols - 1, 1)?;
        let w = resolver.node(graph, "head.w")?;
        let b = resolver.node(graph, "head.b")?;
        let wx = graph.matmul(w, last)?;
        Some(graph.add(wx, b)?)
    } else {
        None
    };

    Ok(ForwardOutput { tokens: stream, logits })
}

fn apply_activation(graph: &mut Graph, activation: Activation, x: NodeId) -> NodeId {
    match activation {
        Activation::Relu => graph.relu(x),
        Activation::Linear => x,
    }
}

/// One deep S4 layer: per-channel scans under zero-order hold, then the
/// channel-mixing projection, bias, and residual term.
fn deep_s4_layer(
    model: &StackedModel,
    graph: &mut Graph,
    resolver: &mut dyn ParamNodes,
    l: usize,
    activation: Activation,
    input: NodeId,
    ones: &Ones,
) -> Result<NodeId> {
    let a = resolver.node(graph, &layer_param(l, "a_diag"))?;
    let b = resolver.node(graph, &layer_param(l, "b"))?;
    let c = resolver.node(graph, &layer_param(l, "c"))?;
    let log_dt = resolver.node(graph, &layer_param(l, "log_dt"))?;
    let h0 = resolver.node(graph, &layer_param(l, "h0"))?;
    let w = resolver.node(graph, &layer_param(l, "w"))?;
    let beta = resolver.node(graph, &layer_param(l, "beta"))?;
    let u = resolver.node(graph, &layer_param(l, "u"))?;

    // Zero-order hold: a_bar = exp(dt*a), b_bar = dt*phi(dt*a)*b.
    let dt = graph.exp(log_dt);
    let dtb = graph.matmul(dt, ones.row_h)?;
    let z = graph.mul(dtb, a)?;
    let a_bar = graph.exp(z);
    let phi = graph.expm1_over_x(z);
    let dt_phi = graph.mul(dtb, phi)?;
    let b_bar = graph.mul(dt_phi, b)?;

    let n = graph.value(input).shape()[1];
    let mut h = h0;
    let mut outputs = Vec::with_capacity(n);
    for t in 0..n {
        let x_t = graph.slice(input, 1, t, 1)?;
        let xb = graph.matmul(x_t, ones.row_h)?;
        let decay = graph.mul(a_bar, h)?;
        let drive = graph.mul(b_bar, xb)?;
        h = graph.add(decay, drive)?;
        let ch = graph.mul(c, h)?;
        let s4_t = graph.matmul(ch, ones.col_h)?;
        let wx = graph.matmul(w, s4_t)?;
        let with_bias = graph.add(wx, beta)?;
        let res = graph.mul(u, x_t)?;
        let pre = graph.add(with_bias, res)?;
        outputs.push(apply_activation(graph, activation, pre));
    }
    graph.concat(&outputs, 1)
}

/// One simplified S6 block: input projection, input-dependent step size and
/// transition/output maps, then the selective scan.
fn s6_layer(
    model: &StackedModel,
    graph: &mut Graph,
    resolver: &mut dyn ParamNodes,
    l: usize,
    activation: Activation,
    input: NodeId,
    ones: &Ones,
) -> Result<NodeId> {
    let a = resolver.node(graph, &layer_param(l, "a"))?;
    let w_b = resolver.node(graph, &layer_param(l, "w_b"))?;
    let w_c = resolver.node(graph, &layer_param(l, "w_c"))?;
    let w_dt_down = resolver.node(graph, &layer_param(l, "w_dt_down"))?;
    let w_dt_up = resolver.node(graph, &layer_param(l, "w_dt_up"))?;
    let beta_dt = resolver.node(graph, &layer_param(l, "beta_dt"))?;
    let w_in = resolver.node(graph, &layer_param(l, "w_in"))?;
    let h0 = resolver.node(graph, &layer_param(l, "h0"))?;

    let n = graph.value(input).shape()[1];
    let z = graph.matmul(w_in, input)?;

    // Step sizes for all positions at once: softplus(up (down z) + bias).
    let down = graph.matmul(w_dt_down, z)?;
    let up = graph.matmul(w_dt_up, down)?;
    let ones_row_n = graph.constant(Tensor::ones(&[1, n]));
    let bias = graph.matmul(beta_dt, ones_row_n)?;
    let pre_dt = graph.add(up, bias)?;
    let dt_all = graph.softplus(pre_dt);

    let b_all = graph.matmul(w_b, z)?;
    let c_all = graph.matmul(w_c, z)?;

    let mut h = h0;
    let mut outputs = Vec::with_capacity(n);
    for t in 0..n {
        let dt_t = graph.slice(dt_all, 1, t, 1)?;
        let dtb = graph.matmul(dt_t, ones.row_h)?;
        let da = graph.mul(dtb, a)?;
        let a_bar = graph.exp(da);

        let b_t = graph.slice(b_all, 1, t, 1)?;
        let b_row = graph.transpose(b_t)?;
        let b_bcast = graph.matmul(ones.col_d, b_row)?;
        let b_bar = graph.mul(dtb, b_bcast)?;

        let z_t = graph.slice(z, 1, t, 1)?;
        let zb = graph.matmul(z_t, ones.row_h)?;
        let decay = graph.mul(a_bar, h)?;
        let drive = graph.mul(b_bar, zb)?;
        h = graph.add(decay, drive)?;

        let c_t = graph.slice(c_all, 1, t, 1)?;
        let c_row = graph.transpose(c_t)?;
        let c_bcast = graph.matmul(ones.col_d, c_row)?;
        let ch = graph.mul(c_bcast, h)?;
        let y_t = graph.matmul(ch, ones.col_h)?;
        outputs.push(apply_activation(graph, activation, y_t));
    }
    let _ = model;
    graph.concat(&outputs, 1)
}

/// Convenience wrapper: runs the frozen model on an input tensor and returns
/// the token outputs as a plain tensor.
pub fn run_frozen(model: &StackedModel, x: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let mut resolver = BaseNodes::all_frozen(&model.params);
    let xn = graph.constant(x.clone());
    let out = forward(model, &mut graph, &mut resolver, xn, &PrefixPlan::None)?;
    Ok(graph.value(out.tokens).clone())
}

/// Frozen-model logits for a classification model.
pub fn run_frozen_logits(model: &StackedModel, x: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let mut resolver = BaseNodes::all_frozen(&model.params);
    let xn = graph.constant(x.clone());
    let out = forward(model, &mut graph, &mut resolver, xn, &PrefixPlan::None)?;
    let logits = out
        .logits
        .ok_or_else(|| TensorError::Invalid("model has no readout head".into()))?;
    Ok(graph.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{discretize, s4_scan, DiscreteChannel, Discretization};

    fn tiny_model(layers: usize, dim: usize, state_dim: usize, act: Activation) -> StackedModel {
        let mut rng = RngStream::new(99);
        StackedModel::deep_s4(layers, dim, state_dim, act, &mut rng).unwrap()
    }

    /// Discretizes channel `d` of layer `l` the same way the forward pass does.
    fn discrete_channel(model: &StackedModel, l: usize, d: usize) -> DiscreteChannel {
        let h = model.state_dim;
        let a = model.params.get(&layer_param(l, "a_diag")).unwrap();
        let b = model.params.get(&layer_param(l, "b")).unwrap();
        let c = model.params.get(&layer_param(l, "c")).unwrap();
        let dt = model.params.get(&layer_param(l, "log_dt")).unwrap().data()[d].exp();
        let mut a_bar = Vec::new();
        let mut b_bar = Vec::new();
        for k in 0..h {
            let (ab, bb) = discretize(a.at(d, k), b.at(d, k), dt, Discretization::Zoh).unwrap();
            a_bar.push(ab);
            b_bar.push(bb);
        }
        DiscreteChannel { a_bar, b_bar, c: (0..h).map(|k| c.at(d, k)).collect() }
    }

    #[test]
    fn single_channel_layer_reduces_to_scan() {
        // W = I, beta = 0, u = 0, linear activation, D = 1.
        let mut model = tiny_model(1, 1, 3, Activation::Linear);
        model.params.insert(&layer_param(0, "w"), Tensor::eye(1));
        model.params.insert(&layer_param(0, "u"), Tensor::zeros(&[1, 1]));

        let x = Tensor::from_vec(vec![1, 5], vec![1.0, -0.5, 2.0, 0.0, 0.7]).unwrap();
        let out = run_frozen(&model, &x).unwrap();

        let ch = discrete_channel(&model, 0, 0);
        let (y, _) = s4_scan(&ch, x.data(), &[0.0; 3]);
        for t in 0..5 {
            assert!((out.at(0, t) - y[t]).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn pass_through_construction_is_identity() {
        // C = 0, W = 0, beta = 0, u = 1, linear activation: the layer copies
        // its input.
        let mut model = tiny_model(1, 3, 4, Activation::Linear);
        model.params.insert(&layer_param(0, "c"), Tensor::zeros(&[3, 4]));
        model.params.insert(&layer_param(0, "w"), Tensor::zeros(&[3, 3]));
        let mut rng = RngStream::new(5);
        let x = rng.normal(&[3, 6], 0.0, 1.0).unwrap();
        let out = run_frozen(&model, &x).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn s4_stage_channels_are_independent() {
        // With W = I, u = 0, beta = 0 and linear activation the output is the
        // per-channel S4 stage; perturbing input channel 1 must leave output
        // channel 0 untouched.
        let mut model = tiny_model(1, 2, 3, Activation::Linear);
        model.params.insert(&layer_param(0, "w"), Tensor::eye(2));
        model.params.insert(&layer_param(0, "u"), Tensor::zeros(&[2, 1]));
        let mut rng = RngStream::new(17);
        let x = rng.normal(&[2, 8], 0.0, 1.0).unwrap();
        let base = run_frozen(&model, &x).unwrap();

        let mut x2 = x.clone();
        for t in 0..8 {
            let v = x2.at(1, t);
            x2.set(1, t, v + 3.0);
        }
        let perturbed = run_frozen(&model, &x2).unwrap();
        for t in 0..8 {
            assert_eq!(base.at(0, t), perturbed.at(0, t));
            assert_ne!(base.at(1, t), perturbed.at(1, t));
        }
    }

    #[test]
    fn s6_strongly_negative_state_matrix_forgets_context() {
        let mut rng = RngStream::new(3);
        let mut model = StackedModel::s6(1, 3, 2, 1, Activation::Linear, &mut rng).unwrap();
        model
            .params
            .insert(&layer_param(0, "a"), Tensor::filled(&[3, 2], -1e4));
        let x = rng.normal(&[3, 6], 0.0, 1.0).unwrap();
        let out = run_frozen(&model, &x).unwrap();

        // Changing earlier tokens must not affect later outputs: the
        // discretized transition underflows to zero.
        let mut x2 = x.clone();
        x2.set(0, 0, 9.0);
        x2.set(1, 1, -7.0);
        let out2 = run_frozen(&model, &x2).unwrap();
        for d in 0..3 {
            for t in 2..6 {
                assert_eq!(out.at(d, t), out2.at(d, t), "d={d} t={t}");
            }
        }
    }

    #[test]
    fn s6_zero_output_map_gives_zero() {
        let mut rng = RngStream::new(4);
        let mut model = StackedModel::s6(1, 3, 2, 1, Activation::Linear, &mut rng).unwrap();
        model.params.insert(&layer_param(0, "w_c"), Tensor::zeros(&[2, 3]));
        let x = rng.normal(&[3, 5], 0.0, 1.0).unwrap();
        let out = run_frozen(&model, &x).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn s6_rank_zero_rejected() {
        let mut rng = RngStream::new(4);
        assert!(StackedModel::s6(1, 3, 2, 0, Activation::Linear, &mut rng).is_err());
    }

    #[test]
    fn head_logits_shape() {
        let mut rng = RngStream::new(11);
        let model = tiny_model(2, 3, 2, Activation::Relu).with_head(2, &mut rng).unwrap();
        let x = rng.normal(&[3, 4], 0.0, 1.0).unwrap();
        let logits = run_frozen_logits(&model, &x).unwrap();
        assert_eq!(logits.shape(), &[2, 1]);
        assert!(logits.all_finite());
    }

    #[test]
    fn forward_outputs_finite_on_integer_tokens() {
        let mut rng = RngStream::new(21);
        let model = tiny_model(4, 8, 4, Activation::Relu);
        let x = rng.integers(&[8, 50], 0, 10).unwrap();
        let out = run_frozen(&model, &x).unwrap();
        assert!(out.all_finite());
    }
}
