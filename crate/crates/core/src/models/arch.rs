//! Architecture specs and graph builders.

use actisleep_nn::{GraphBuilder, NetworkGraph, NodeId};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::features::NUM_FEATURES;
use crate::types::WINDOW_LEN;

pub const NUM_STATES: usize = 4;
pub const MLP_HIDDEN: [usize; 5] = [1024, 512, 64, 128, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
}

impl ConvStage {
    pub const fn new(filters: usize, kernel_width: usize, pool_width: usize) -> Self {
        Self {
            filters,
            kernel_width,
            pool_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequentialCnnSpec {
    pub input_len: usize,
    pub stages: Vec<ConvStage>,
    pub dense: Vec<usize>,
}

impl Default for SequentialCnnSpec {
    fn default() -> Self {
        Self {
            input_len: WINDOW_LEN,
            stages: vec![ConvStage::new(32, 16, 4), ConvStage::new(64, 8, 4), ConvStage::new(96, 8, 2)],
            dense: vec![512, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiTaskCnnSpec {
    pub input_len: usize,
    pub trunk: Vec<ConvStage>,
    /// Hidden layers of the auxiliary (sleep fraction) branch.
    pub aux_dense: Vec<usize>,
    pub right_stages: Vec<ConvStage>,
    /// Dense layers of the main branch before the center value is joined.
    pub pre_concat_dense: Vec<usize>,
    /// Dense layers after the join, before the 4-way output.
    pub post_concat_dense: Vec<usize>,
    pub aux_weight: f64,
    pub main_weight: f64,
}

impl Default for MultiTaskCnnSpec {
    fn default() -> Self {
        Self {
            input_len: WINDOW_LEN,
            trunk: SequentialCnnSpec::default().stages,
            aux_dense: vec![128],
            right_stages: vec![ConvStage::new(96, 4, 2)],
            pre_concat_dense: vec![512],
            post_concat_dense: vec![32],
            aux_weight: 1.0,
            main_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpBaselineSpec {
    pub hidden: Vec<usize>,
    pub keep_prob: f64,
    pub batch_norm_epsilon: f64,
}

impl Default for MlpBaselineSpec {
    fn default() -> Self {
        Self {
            hidden: MLP_HIDDEN.to_vec(),
            keep_prob: 0.8,
            batch_norm_epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SeqCnn,
    MtlCnn,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SeqCnn => "seq-cnn",
            ModelKind::MtlCnn => "mtl-cnn",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "seq-cnn" => Ok(ModelKind::SeqCnn),
            "mtl-cnn" => Ok(ModelKind::MtlCnn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected seq-cnn, mtl-cnn or mlp)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    SeqCnn(SequentialCnnSpec),
    MtlCnn(MultiTaskCnnSpec),
    Mlp(MlpBaselineSpec),
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::SeqCnn => ModelSpec::SeqCnn(Default::default()),
            ModelKind::MtlCnn => ModelSpec::MtlCnn(Default::default()),
            ModelKind::Mlp => ModelSpec::Mlp(Default::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::SeqCnn(_) => ModelKind::SeqCnn,
            ModelSpec::MtlCnn(_) => ModelKind::MtlCnn,
            ModelSpec::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn build(&self) -> Result<NetworkGraph> {
        match self {
            ModelSpec::SeqCnn(s) => build_sequential_cnn(s),
            ModelSpec::MtlCnn(s) => build_multitask_cnn(s),
            ModelSpec::Mlp(s) => build_mlp(s),
        }
    }

    /// Loss weight per output head, main head first.
    pub fn head_weights(&self) -> Vec<f64> {
        match self {
            ModelSpec::MtlCnn(s) => vec![s.main_weight, s.aux_weight],
            _ => vec![1.0],
        }
    }

    /// Whether the graph consumes engineered features instead of the raw window.
    pub fn uses_features(&self) -> bool {
        matches!(self, ModelSpec::Mlp(_))
    }

    pub fn input_len(&self) -> usize {
        match self {
            ModelSpec::SeqCnn(s) => s.input_len,
            ModelSpec::MtlCnn(s) => s.input_len,
            ModelSpec::Mlp(_) => NUM_FEATURES,
        }
    }
}

fn conv_stages(b: &mut GraphBuilder, prefix: &str, mut x: NodeId, stages: &[ConvStage]) -> Result<NodeId> {
    for (i, st) in stages.iter().enumerate() {
        let n = i + 1;
        x = b.conv1d(&format!("{prefix}conv{n}"), x, st.filters, st.kernel_width, 1)?;
        x = b.relu(&format!("{prefix}conv{n}_relu"), x)?;
        x = b.max_pool(&format!("{prefix}pool{n}"), x, st.pool_width, st.pool_width)?;
    }
    Ok(x)
}

fn dense_stack(b: &mut GraphBuilder, prefix: &str, mut x: NodeId, sizes: &[usize]) -> Result<NodeId> {
    for (i, &units) in sizes.iter().enumerate() {
        let n = i + 1;
        x = b.dense(&format!("{prefix}fc{n}"), x, units)?;
        x = b.relu(&format!("{prefix}fc{n}_relu"), x)?;
    }
    Ok(x)
}

fn check_len(input_len: usize) -> Result<()> {
    if input_len % 2 == 0 {
        return Err(Error::Config(format!(
            "window length must be odd so it has a center epoch, got {input_len}"
        )));
    }
    Ok(())
}

pub fn build_sequential_cnn(spec: &SequentialCnnSpec) -> Result<NetworkGraph> {
    check_len(spec.input_len)?;
    let mut b = GraphBuilder::new(spec.input_len, 1);
    let x = b.standardize("scale", b.input())?;
    let x = conv_stages(&mut b, "", x, &spec.stages)?;
    let x = dense_stack(&mut b, "", x, &spec.dense)?;
    let out = b.dense("out", x, NUM_STATES)?;
    Ok(b.finish(vec![out])?)
}

/// Shared trunk with two heads: output 0 is the 4-state head, output 1 the
/// 2-way sleep-fraction head.
pub fn build_multitask_cnn(spec: &MultiTaskCnnSpec) -> Result<NetworkGraph> {
    build_mtl_graph(spec, true)
}

/// The multi-task graph without its auxiliary branch. Node names match, so
/// parameters can be copied between the two by name.
pub fn build_right_path_cnn(spec: &MultiTaskCnnSpec) -> Result<NetworkGraph> {
    build_mtl_graph(spec, false)
}

fn build_mtl_graph(spec: &MultiTaskCnnSpec, with_aux: bool) -> Result<NetworkGraph> {
    check_len(spec.input_len)?;
    let mut b = GraphBuilder::new(spec.input_len, 1);
    let scaled = b.standardize("scale", b.input())?;
    let trunk = conv_stages(&mut b, "", scaled, &spec.trunk)?;

    let aux = if with_aux {
        let x = dense_stack(&mut b, "aux_", trunk, &spec.aux_dense)?;
        Some(b.dense("aux_out", x, 2)?)
    } else {
        None
    };

    let x = conv_stages(&mut b, "right_", trunk, &spec.right_stages)?;
    let x = dense_stack(&mut b, "right_", x, &spec.pre_concat_dense)?;
    let center = b.select("center", scaled, spec.input_len / 2)?;
    let joined = b.concat("join", &[x, center])?;
    let x = dense_stack(&mut b, "joined_", joined, &spec.post_concat_dense)?;
    let main = b.dense("out", x, NUM_STATES)?;

    let mut outputs = vec![main];
    outputs.extend(aux);
    Ok(b.finish(outputs)?)
}

pub fn build_mlp(spec: &MlpBaselineSpec) -> Result<NetworkGraph> {
    if spec.hidden != MLP_HIDDEN {
        return Err(Error::Config(format!(
            "MLP baseline hidden sizes are fixed to {MLP_HIDDEN:?}, got {:?}",
            spec.hidden
        )));
    }
    let mut b = GraphBuilder::new(1, NUM_FEATURES);
    let mut x = b.batch_norm("input_bn", b.input(), spec.batch_norm_epsilon)?;
    for (i, &units) in spec.hidden.iter().enumerate() {
        let n = i + 1;
        x = b.dense(&format!("fc{n}"), x, units)?;
        x = b.batch_norm(&format!("fc{n}_bn"), x, spec.batch_norm_epsilon)?;
        x = b.relu(&format!("fc{n}_relu"), x)?;
        x = b.dropout(&format!("fc{n}_dropout"), x, spec.keep_prob)?;
    }
    let out = b.dense("out", x, NUM_STATES)?;
    Ok(b.finish(vec![out])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use actisleep_nn::NnError;

    #[test]
    fn default_shapes() {
        let g = build_sequential_cnn(&SequentialCnnSpec::default()).unwrap();
        assert_eq!(g.output_shapes()[0].units(), 4);
        let m = build_multitask_cnn(&MultiTaskCnnSpec::default()).unwrap();
        let shapes: Vec<usize> = m.output_shapes().iter().map(|s| s.units()).collect();
        assert_eq!(shapes, vec![4, 2]);
        let join = &m.nodes()[m.node_id("join").unwrap()];
        let pre = &m.nodes()[join.inputs[0]];
        assert_eq!(join.shape.units(), pre.shape.units() + 1);
        assert_eq!(build_mlp(&MlpBaselineSpec::default()).unwrap().output_shapes()[0].units(), 4);
    }

    #[test]
    fn infeasible_stage_is_named() {
        let spec = SequentialCnnSpec {
            stages: vec![ConvStage::new(8, 16, 4), ConvStage::new(8, 400, 2)],
            ..Default::default()
        };
        match build_sequential_cnn(&spec) {
            Err(Error::Nn(NnError::InfeasibleStage { stage, .. })) => assert_eq!(stage, "conv2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mlp_layers_are_fixed() {
        let spec = MlpBaselineSpec {
            hidden: vec![1024, 512, 64, 32, 128],
            ..Default::default()
        };
        assert!(build_mlp(&spec).is_err());
    }

    #[test]
    fn spec_serde_is_tagged() {
        let s = serde_json::to_string(&ModelSpec::default_for(ModelKind::Mlp)).unwrap();
        assert!(s.starts_with(r#"{"kind":"mlp""#));
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back.kind(), ModelKind::Mlp);
    }
}
