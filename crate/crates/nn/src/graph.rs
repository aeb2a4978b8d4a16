//! Layered network description with branch points and concatenation
//! junctions, plus batched forward and reverse-mode backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{BatchNorm, BatchNormCache, Conv1d, Dense, Dropout, MaxPool1d};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Per-sample activation shape. Dense activations use `len == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub len: usize,
    pub channels: usize,
}

impl MapShape {
    pub fn units(&self) -> usize {
        self.len * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Input,
    /// Fixed affine rescaling `(x - mean) / std`; not trained.
    Standardize { mean: f64, std: f64 },
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Relu,
    Dense(Dense),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    /// Flattens and joins all inputs in order.
    Concat,
    /// Picks one position of a map, keeping its channels.
    Select { position: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: MapShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Dropout active, batch normalization on minibatch statistics.
    Train,
    /// Deterministic inference.
    #[default]
    Eval,
}

/// A named parameter or state block, used for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Gradients aligned with [`NetworkGraph::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }

    pub fn num_values(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<u32>),
    BatchStats(BatchNormCache),
    Mask(Vec<f64>),
}

/// Activations retained from a forward pass for use by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    mode: Mode,
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Flat `(batch, units)` activation of a node.
    pub fn activation(&self, node: NodeId) -> &[f64] {
        &self.acts[node]
    }
}

/// Incrementally assembles a [`NetworkGraph`], checking shapes per stage.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new(input_len: usize, input_channels: usize) -> Self {
        Self {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
                shape: MapShape {
                    len: input_len,
                    channels: input_channels,
                },
            }],
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> MapShape {
        self.nodes[id].shape
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, shape: MapShape) -> NodeId {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    fn check_input(&self, name: &str, id: NodeId) -> Result<MapShape> {
        self.nodes
            .get(id)
            .map(|n| n.shape)
            .ok_or_else(|| infeasible(name, format!("unknown input node {id}")))
    }

    pub fn standardize(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        Ok(self.push(name, Op::Standardize { mean: 0.0, std: 1.0 }, vec![x], shape))
    }

    pub fn conv1d(
        &mut self,
        name: &str,
        x: NodeId,
        filters: usize,
        width: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        let layer = Conv1d::new(width, shape.channels, filters, stride)
            .map_err(|e| infeasible(name, e.to_string()))?;
        let len = layer
            .output_len(shape.len)
            .map_err(|e| infeasible(name, e.to_string()))?;
        Ok(self.push(
            name,
            Op::Conv1d(layer),
            vec![x],
            MapShape {
                len,
                channels: filters,
            },
        ))
    }

    pub fn max_pool(&mut self, name: &str, x: NodeId, width: usize, stride: usize) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        let pool = MaxPool1d::new(width, stride).map_err(|e| infeasible(name, e.to_string()))?;
        let len = pool
            .output_len(shape.len)
            .map_err(|e| infeasible(name, e.to_string()))?;
        Ok(self.push(
            name,
            Op::MaxPool1d(pool),
            vec![x],
            MapShape {
                len,
                channels: shape.channels,
            },
        ))
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        Ok(self.push(name, Op::Relu, vec![x], shape))
    }

    pub fn dense(&mut self, name: &str, x: NodeId, units: usize) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        let layer = Dense::new(shape.units(), units).map_err(|e| infeasible(name, e.to_string()))?;
        Ok(self.push(
            name,
            Op::Dense(layer),
            vec![x],
            MapShape {
                len: 1,
                channels: units,
            },
        ))
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId, epsilon: f64) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        let layer =
            BatchNorm::new(shape.channels, epsilon).map_err(|e| infeasible(name, e.to_string()))?;
        Ok(self.push(name, Op::BatchNorm(layer), vec![x], shape))
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, keep_prob: f64) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        let layer = Dropout::new(keep_prob).map_err(|e| infeasible(name, e.to_string()))?;
        Ok(self.push(name, Op::Dropout(layer), vec![x], shape))
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(infeasible(name, "concatenation needs at least one input".into()));
        }
        let mut units = 0;
        for &x in xs {
            units += self.check_input(name, x)?.units();
        }
        Ok(self.push(
            name,
            Op::Concat,
            xs.to_vec(),
            MapShape {
                len: 1,
                channels: units,
            },
        ))
    }

    pub fn select(&mut self, name: &str, x: NodeId, position: usize) -> Result<NodeId> {
        let shape = self.check_input(name, x)?;
        if position >= shape.len {
            return Err(infeasible(
                name,
                format!("position {position} outside map of length {}", shape.len),
            ));
        }
        Ok(self.push(
            name,
            Op::Select { position },
            vec![x],
            MapShape {
                len: 1,
                channels: shape.channels,
            },
        ))
    }

    pub fn finish(self, outputs: Vec<NodeId>) -> Result<NetworkGraph> {
        if outputs.is_empty() {
            return Err(NnError::Config("graph needs at least one output".into()));
        }
        if let Some(&bad) = outputs.iter().find(|&&o| o >= self.nodes.len()) {
            return Err(NnError::Config(format!("output node {bad} does not exist")));
        }
        let inputs = self
            .nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Input))
            .count();
        if inputs != 1 {
            return Err(NnError::Config(format!("graph has {inputs} input nodes")));
        }
        Ok(NetworkGraph {
            nodes: self.nodes,
            outputs,
            mode: Mode::Eval,
            cache: None,
            dropout_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }
}

fn infeasible(stage: &str, reason: String) -> NnError {
    NnError::InfeasibleStage {
        stage: stage.to_string(),
        reason,
    }
}

/// Directed acyclic network: nodes are stored in topological order and
/// every node reads only from earlier nodes.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
    mode: Mode,
    cache: Option<ForwardCache>,
    dropout_rng: ChaCha8Rng,
}

impl NetworkGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn input_shape(&self) -> MapShape {
        self.nodes[0].shape
    }

    pub fn output_shapes(&self) -> Vec<MapShape> {
        self.outputs.iter().map(|&o| self.nodes[o].shape).collect()
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// True if the graph contains layers whose training-mode forward pass
    /// depends on randomness or on the batch composition.
    pub fn has_stochastic_layers(&self) -> bool {
        self.nodes.iter().any(|n| match &n.op {
            Op::Dropout(d) => d.is_stochastic(),
            Op::BatchNorm(_) => true,
            _ => false,
        })
    }

    pub fn is_deterministic(&self) -> bool {
        self.mode == Mode::Eval || !self.has_stochastic_layers()
    }

    pub fn seed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Draws every trainable parameter from a seeded generator.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv1d(c) => c.init(&mut rng),
                Op::Dense(d) => d.init(&mut rng),
                _ => {}
            }
        }
    }

    /// Sets the fixed input rescaling of every standardization node.
    pub fn set_standardization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(NnError::Config(format!(
                "standardization needs finite mean and positive std (got {mean}, {std})"
            )));
        }
        for node in &mut self.nodes {
            if let Op::Standardize { mean: m, std: s } = &mut node.op {
                *m = mean;
                *s = std;
            }
        }
        Ok(())
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Op> {
        self.nodes
            .iter_mut()
            .find(|n| n.name == name)
            .map(|n| &mut n.op)
    }

    /// Trainable parameter slices in a fixed order.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Conv1d(c) => {
                    out.push(c.weights.as_slice());
                    out.push(c.bias.as_slice());
                }
                Op::Dense(d) => {
                    out.push(d.weights.as_slice());
                    out.push(d.bias.as_slice());
                }
                Op::BatchNorm(b) => {
                    out.push(b.gamma.as_slice());
                    out.push(b.beta.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv1d(c) => {
                    out.push(c.weights.as_mut_slice());
                    out.push(c.bias.as_mut_slice());
                }
                Op::Dense(d) => {
                    out.push(d.weights.as_mut_slice());
                    out.push(d.bias.as_mut_slice());
                }
                Op::BatchNorm(b) => {
                    out.push(b.gamma.as_mut_slice());
                    out.push(b.beta.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.named_blocks()
            .into_iter()
            .filter(|b| !is_state_block(&b.name))
            .map(|b| b.name)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Every parameter and state block (running statistics, input scaling),
    /// for persistence.
    pub fn named_blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let block = |suffix: &str, shape: Vec<usize>, values: &[f64]| ParamBlock {
                name: format!("{}.{suffix}", node.name),
                shape,
                values: values.to_vec(),
            };
            match &node.op {
                Op::Standardize { mean, std } => {
                    out.push(block("scaling", vec![2], &[*mean, *std]));
                }
                Op::Conv1d(c) => {
                    out.push(block(
                        "weights",
                        vec![c.kernel_width, c.in_channels, c.out_channels],
                        &c.weights,
                    ));
                    out.push(block("bias", vec![c.out_channels], &c.bias));
                }
                Op::Dense(d) => {
                    out.push(block("weights", vec![d.in_units, d.out_units], &d.weights));
                    out.push(block("bias", vec![d.out_units], &d.bias));
                }
                Op::BatchNorm(b) => {
                    out.push(block("gamma", vec![b.channels], &b.gamma));
                    out.push(block("beta", vec![b.channels], &b.beta));
                    out.push(block("running_mean", vec![b.channels], &b.running_mean));
                    out.push(block("running_var", vec![b.channels], &b.running_var));
                }
                _ => {}
            }
        }
        out
    }

    /// Restores blocks produced by [`named_blocks`](Self::named_blocks) on a
    /// graph of identical topology.
    pub fn load_blocks(&mut self, blocks: &[ParamBlock]) -> Result<()> {
        let expected = self.named_blocks();
        if expected.len() != blocks.len() {
            return Err(NnError::ParamMismatch(format!(
                "expected {} blocks, got {}",
                expected.len(),
                blocks.len()
            )));
        }
        for (e, b) in expected.iter().zip(blocks) {
            if e.name != b.name || e.shape != b.shape || b.values.len() != e.values.len() {
                return Err(NnError::ParamMismatch(format!(
                    "block `{}` {:?} does not match expected `{}` {:?}",
                    b.name, b.shape, e.name, e.shape
                )));
            }
        }
        let mut it = blocks.iter();
        let mut next = || it.next().expect("length checked").values.clone();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Standardize { mean, std } => {
                    let v = next();
                    *mean = v[0];
                    *std = v[1];
                }
                Op::Conv1d(c) => {
                    c.weights = next();
                    c.bias = next();
                }
                Op::Dense(d) => {
                    d.weights = next();
                    d.bias = next();
                }
                Op::BatchNorm(b) => {
                    b.gamma = next();
                    b.beta = next();
                    b.running_mean = next();
                    b.running_var = next();
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn batch_of(&self, input: &Tensor) -> Result<usize> {
        let units = self.input_shape().units();
        let shape = input.shape();
        let n = match shape {
            [n, rest @ ..] if !rest.is_empty() && rest.iter().product::<usize>() == units => *n,
            _ => {
                return Err(NnError::Shape(format!(
                    "graph expects batches of {:?} inputs, got tensor {:?}",
                    self.input_shape(),
                    shape
                )))
            }
        };
        if n == 0 {
            return Err(NnError::Shape("empty batch".into()));
        }
        Ok(n)
    }

    fn run(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        let n = self.batch_of(input)?;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        let mut rng = rng;
        for node in &self.nodes {
            let out_units = node.shape.units();
            let mut out = vec![0.0; n * out_units];
            let mut node_aux = Aux::None;
            match &node.op {
                Op::Input => out.copy_from_slice(input.data()),
                Op::Standardize { mean, std } => {
                    for (o, x) in out.iter_mut().zip(&acts[node.inputs[0]]) {
                        *o = (x - mean) / std;
                    }
                }
                Op::Conv1d(c) => {
                    let src = &self.nodes[node.inputs[0]].shape;
                    let x = &acts[node.inputs[0]];
                    for (xs, os) in x
                        .chunks_exact(src.units())
                        .zip(out.chunks_exact_mut(out_units))
                    {
                        c.forward_sample(xs, src.len, os);
                    }
                }
                Op::MaxPool1d(p) => {
                    let src = &self.nodes[node.inputs[0]].shape;
                    let x = &acts[node.inputs[0]];
                    let mut argmax = vec![0u32; n * out_units];
                    for ((xs, os), am) in x
                        .chunks_exact(src.units())
                        .zip(out.chunks_exact_mut(out_units))
                        .zip(argmax.chunks_exact_mut(out_units))
                    {
                        p.forward_sample(xs, src.len, src.channels, os, am);
                    }
                    node_aux = Aux::Argmax(argmax);
                }
                Op::Relu => {
                    for (o, x) in out.iter_mut().zip(&acts[node.inputs[0]]) {
                        *o = x.max(0.0);
                    }
                }
                Op::Dense(d) => d.forward_batch(&acts[node.inputs[0]], n, &mut out),
                Op::BatchNorm(b) => {
                    let x = &acts[node.inputs[0]];
                    if mode == Mode::Train {
                        node_aux = Aux::BatchStats(b.forward_train(x, &mut out));
                    } else {
                        b.forward_eval(x, &mut out);
                    }
                }
                Op::Dropout(d) => {
                    let x = &acts[node.inputs[0]];
                    match (mode, rng.as_deref_mut()) {
                        (Mode::Train, Some(r)) if d.is_stochastic() => {
                            let mask = d.sample_mask(x.len(), r);
                            for ((o, xv), m) in out.iter_mut().zip(x).zip(&mask) {
                                *o = xv * m;
                            }
                            node_aux = Aux::Mask(mask);
                        }
                        _ => out.copy_from_slice(x),
                    }
                }
                Op::Concat => {
                    let mut offset = 0;
                    for &src in &node.inputs {
                        let w = self.nodes[src].shape.units();
                        for (xs, os) in acts[src]
                            .chunks_exact(w)
                            .zip(out.chunks_exact_mut(out_units))
                        {
                            os[offset..offset + w].copy_from_slice(xs);
                        }
                        offset += w;
                    }
                }
                Op::Select { position } => {
                    let src = &self.nodes[node.inputs[0]].shape;
                    let ch = src.channels;
                    for (xs, os) in acts[node.inputs[0]]
                        .chunks_exact(src.units())
                        .zip(out.chunks_exact_mut(out_units))
                    {
                        os.copy_from_slice(&xs[position * ch..(position + 1) * ch]);
                    }
                }
            }
            acts.push(out);
            aux.push(node_aux);
        }
        Ok(ForwardCache {
            batch: n,
            mode,
            acts,
            aux,
        })
    }

    fn outputs_of(&self, cache: &ForwardCache) -> Vec<Tensor> {
        self.outputs
            .iter()
            .map(|&o| {
                let units = self.nodes[o].shape.units();
                Tensor::new(vec![cache.batch, units], cache.acts[o].clone()).expect("sized")
            })
            .collect()
    }

    /// Forward pass in the graph's current mode. The activations are kept
    /// for the next call to [`backward`](Self::backward); in training mode
    /// batch-normalization running statistics are updated.
    ///
    /// Returns one `(batch, units)` logit tensor per output head.
    pub fn forward(&mut self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mode = self.mode;
        let mut rng = self.dropout_rng.clone();
        let cache = self.run(input, mode, Some(&mut rng))?;
        self.dropout_rng = rng;
        if mode == Mode::Train {
            for (node, aux) in self.nodes.iter_mut().zip(&cache.aux) {
                if let (Op::BatchNorm(b), Aux::BatchStats(stats)) = (&mut node.op, aux) {
                    b.update_running(stats);
                }
            }
        }
        let out = self.outputs_of(&cache);
        self.cache = Some(cache);
        Ok(out)
    }

    /// Deterministic inference; safe to call concurrently on a shared graph.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let cache = self.run(input, Mode::Eval, None)?;
        Ok(self.outputs_of(&cache))
    }

    /// Inference that also returns every intermediate activation.
    pub fn trace(&self, input: &Tensor) -> Result<ForwardCache> {
        self.run(input, Mode::Eval, None)
    }

    /// Discrete decisions taken by the piecewise-linear layers (ReLU signs
    /// and pooling winners) on an inference pass.
    pub fn kink_signature(&self, input: &Tensor) -> Result<Vec<u32>> {
        let cache = self.run(input, Mode::Eval, None)?;
        let mut sig = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match (&node.op, &cache.aux[id]) {
                (Op::Relu, _) => sig.extend(
                    cache.acts[node.inputs[0]]
                        .iter()
                        .map(|&x| u32::from(x > 0.0)),
                ),
                (Op::MaxPool1d(_), Aux::Argmax(a)) => sig.extend_from_slice(a),
                _ => {}
            }
        }
        Ok(sig)
    }

    /// Reverse-mode pass over the cached forward activations.
    ///
    /// `head_grads` holds one `(batch, units)` gradient per output head with
    /// respect to that head's logits. Gradients meeting at a branch point
    /// are summed; a concatenation splits its gradient by position.
    pub fn backward(&mut self, head_grads: &[Tensor]) -> Result<Gradients> {
        let cache = self.cache.take().ok_or(NnError::MissingForwardCache)?;
        let result = self.backward_from(&cache, head_grads);
        self.cache = Some(cache);
        result
    }

    pub fn backward_from(&self, cache: &ForwardCache, head_grads: &[Tensor]) -> Result<Gradients> {
        if cache.acts.len() != self.nodes.len() {
            return Err(NnError::MissingForwardCache);
        }
        if head_grads.len() != self.outputs.len() {
            return Err(NnError::Shape(format!(
                "{} head gradients for {} outputs",
                head_grads.len(),
                self.outputs.len()
            )));
        }
        let n = cache.batch;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (&o, g) in self.outputs.iter().zip(head_grads) {
            if g.len() != n * self.nodes[o].shape.units() {
                return Err(NnError::Shape(format!(
                    "gradient for head `{}` has {} values, expected {}",
                    self.nodes[o].name,
                    g.len(),
                    n * self.nodes[o].shape.units()
                )));
            }
            accumulate(&mut grads[o], g.data());
        }

        let param_nodes: Vec<usize> = self
            .nodes
            .iter()
            .map(|node| match node.op {
                Op::Conv1d(_) | Op::Dense(_) | Op::BatchNorm(_) => 2,
                _ => 0,
            })
            .collect();
        let mut offsets = Vec::with_capacity(self.nodes.len());
        let mut acc = 0;
        for c in &param_nodes {
            offsets.push(acc);
            acc += c;
        }
        let mut blocks: Vec<Vec<f64>> = self.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
        let mut scratch = Vec::new();

        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Input) {
                continue;
            }
            let needs_input_grad = |src: NodeId| !matches!(self.nodes[src].op, Op::Input);
            match &node.op {
                Op::Input => {}
                Op::Standardize { std, .. } => {
                    let src = node.inputs[0];
                    if needs_input_grad(src) {
                        let gi: Vec<f64> = g.iter().map(|v| v / std).collect();
                        accumulate(&mut grads[src], &gi);
                    }
                }
                Op::Conv1d(c) => {
                    let src = node.inputs[0];
                    let s = self.nodes[src].shape;
                    let (gw, rest) = blocks[offsets[id]..].split_at_mut(1);
                    let gb = &mut rest[0];
                    let want = needs_input_grad(src);
                    let mut gi = if want { vec![0.0; n * s.units()] } else { Vec::new() };
                    let units_out = node.shape.units();
                    for b in 0..n {
                        let x = &cache.acts[src][b * s.units()..(b + 1) * s.units()];
                        let go = &g[b * units_out..(b + 1) * units_out];
                        let gis = if want {
                            Some(&mut gi[b * s.units()..(b + 1) * s.units()])
                        } else {
                            None
                        };
                        c.backward_sample(x, s.len, go, &mut gw[0], gb, gis, &mut scratch);
                    }
                    if want {
                        accumulate(&mut grads[src], &gi);
                    }
                }
                Op::MaxPool1d(_) => {
                    let src = node.inputs[0];
                    if needs_input_grad(src) {
                        let s = self.nodes[src].shape;
                        let Aux::Argmax(argmax) = &cache.aux[id] else {
                            return Err(NnError::MissingForwardCache);
                        };
                        let units_out = node.shape.units();
                        let mut gi = vec![0.0; n * s.units()];
                        for b in 0..n {
                            MaxPool1d::backward_sample(
                                &g[b * units_out..(b + 1) * units_out],
                                &argmax[b * units_out..(b + 1) * units_out],
                                s.channels,
                                &mut gi[b * s.units()..(b + 1) * s.units()],
                            );
                        }
                        accumulate(&mut grads[src], &gi);
                    }
                }
                Op::Relu => {
                    let src = node.inputs[0];
                    if needs_input_grad(src) {
                        let gi: Vec<f64> = g
                            .iter()
                            .zip(&cache.acts[src])
                            .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[src], &gi);
                    }
                }
                Op::Dense(d) => {
                    let src = node.inputs[0];
                    let (gw, rest) = blocks[offsets[id]..].split_at_mut(1);
                    if needs_input_grad(src) {
                        let mut gi = vec![0.0; n * d.in_units];
                        d.backward_batch(&cache.acts[src], n, &g, &mut gw[0], &mut rest[0], Some(&mut gi));
                        accumulate(&mut grads[src], &gi);
                    } else {
                        d.backward_batch(&cache.acts[src], n, &g, &mut gw[0], &mut rest[0], None);
                    }
                }
                Op::BatchNorm(bn) => {
                    let src = node.inputs[0];
                    let (gg, rest) = blocks[offsets[id]..].split_at_mut(1);
                    let mut gi = vec![0.0; g.len()];
                    match (&cache.aux[id], cache.mode) {
                        (Aux::BatchStats(stats), Mode::Train) => {
                            bn.backward_train(&g, stats, &mut gg[0], &mut rest[0], &mut gi)
                        }
                        _ => bn.backward_eval(&g, &cache.acts[src], &mut gg[0], &mut rest[0], &mut gi),
                    }
                    if needs_input_grad(src) {
                        accumulate(&mut grads[src], &gi);
                    }
                }
                Op::Dropout(_) => {
                    let src = node.inputs[0];
                    if needs_input_grad(src) {
                        let gi: Vec<f64> = match &cache.aux[id] {
                            Aux::Mask(mask) => g.iter().zip(mask).map(|(a, b)| a * b).collect(),
                            _ => g.clone(),
                        };
                        accumulate(&mut grads[src], &gi);
                    }
                }
                Op::Concat => {
                    let total = node.shape.units();
                    let mut offset = 0;
                    for &src in &node.inputs {
                        let w = self.nodes[src].shape.units();
                        if needs_input_grad(src) {
                            let gi: Vec<f64> = g
                                .chunks_exact(total)
                                .flat_map(|row| row[offset..offset + w].iter().copied())
                                .collect();
                            accumulate(&mut grads[src], &gi);
                        }
                        offset += w;
                    }
                }
                Op::Select { position } => {
                    let src = node.inputs[0];
                    if needs_input_grad(src) {
                        let s = self.nodes[src].shape;
                        let ch = s.channels;
                        let mut gi = vec![0.0; n * s.units()];
                        for (b, row) in g.chunks_exact(ch).enumerate() {
                            let base = b * s.units() + position * ch;
                            gi[base..base + ch].copy_from_slice(row);
                        }
                        accumulate(&mut grads[src], &gi);
                    }
                }
            }
        }
        Ok(Gradients { blocks })
    }
}

fn is_state_block(name: &str) -> bool {
    name.ends_with(".scaling") || name.ends_with(".running_mean") || name.ends_with(".running_var")
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dense() -> NetworkGraph {
        let mut b = GraphBuilder::new(2, 1);
        let x = b.input();
        let d = b.dense("fc", x, 2).unwrap();
        let mut g = b.finish(vec![d]).unwrap();
        if let Some(Op::Dense(layer)) = g.layer_mut("fc") {
            layer.weights = vec![1.0, 2.0, 3.0, 4.0];
            layer.bias = vec![0.0, 0.0];
        }
        g
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut g = tiny_dense();
        let err = g.backward(&[Tensor::zeros(vec![1, 2])]).unwrap_err();
        assert_eq!(err, NnError::MissingForwardCache);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut g = tiny_dense();
        g.forward(&Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap()).unwrap();
        let grads = g.backward(&[Tensor::zeros(vec![1, 2])]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn dense_two_by_two_by_hand() {
        // y = x W + b; dL/dW[i][j] = x_i * g_j, dL/db = g.
        let mut g = tiny_dense();
        g.forward(&Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap()).unwrap();
        let grads = g
            .backward(&[Tensor::new(vec![1, 2], vec![0.5, 1.5]).unwrap()])
            .unwrap();
        assert_eq!(grads.blocks[0], vec![1.0, 3.0, -0.5, -1.5]);
        assert_eq!(grads.blocks[1], vec![0.5, 1.5]);
    }

    #[test]
    fn infeasible_stage_is_named() {
        let mut b = GraphBuilder::new(10, 1);
        let x = b.input();
        let c = b.conv1d("conv_a", x, 4, 8, 1).unwrap();
        let err = b.conv1d("conv_b", c, 4, 8, 1).unwrap_err();
        match err {
            NnError::InfeasibleStage { stage, .. } => assert_eq!(stage, "conv_b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn branch_gradients_sum() {
        // Two heads reading the same dense node: gradient is the sum.
        let mut b = GraphBuilder::new(2, 1);
        let x = b.input();
        let d = b.dense("fc", x, 2).unwrap();
        let r1 = b.relu("r1", d).unwrap();
        let r2 = b.relu("r2", d).unwrap();
        let mut g = b.finish(vec![r1, r2]).unwrap();
        if let Some(Op::Dense(layer)) = g.layer_mut("fc") {
            layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        }
        g.forward(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let ones = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let grads = g.backward(&[ones.clone(), ones]).unwrap();
        assert_eq!(grads.blocks[1], vec![2.0, 2.0]);
    }

    #[test]
    fn blocks_round_trip() {
        let mut g = tiny_dense();
        let blocks = g.named_blocks();
        let mut other = tiny_dense();
        other.init_params(9);
        assert_ne!(other.named_blocks(), blocks);
        other.load_blocks(&blocks).unwrap();
        assert_eq!(other.named_blocks(), blocks);
        g.init_params(3);
        let mut bad = blocks.clone();
        bad[0].shape = vec![4];
        assert!(other.load_blocks(&bad).is_err());
    }
}
