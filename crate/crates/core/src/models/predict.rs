use actisleep_nn::{argmax, softmax, NetworkGraph, Tensor};

use crate::error::{Error, Result};
use crate::models::arch::{ModelKind, ModelSpec};
use crate::models::data::DataConfig;
use crate::models::features::features_from_values;
use crate::series::smooth_values;
use crate::types::{LabeledSeries, SleepState};

const PREDICT_BATCH: usize = 64;

/// A built graph together with the spec and preprocessing it was trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub data: DataConfig,
    pub graph: NetworkGraph,
    loaded: bool,
}

impl Model {
    /// Fresh model with seeded random parameters; not yet usable for prediction.
    pub fn new(spec: ModelSpec, data: DataConfig, seed: u64) -> Result<Self> {
        let mut graph = spec.build()?;
        graph.init_params(seed);
        Ok(Self {
            spec,
            data,
            graph,
            loaded: false,
        })
    }

    /// Wraps a graph whose parameters were trained or restored.
    pub fn from_trained(spec: ModelSpec, data: DataConfig, graph: NetworkGraph) -> Self {
        Self {
            spec,
            data,
            graph,
            loaded: true,
        }
    }

    pub fn mark_loaded(&mut self) {
        self.loaded = true;
    }

    pub fn is_loaded(&self) -> bool {
        self.loaded
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    fn input_row(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.data.window_len() {
            return Err(Error::LengthMismatch(format!(
                "model expects {}-value windows, got {}",
                self.data.window_len(),
                window.len()
            )));
        }
        if self.spec.uses_features() {
            features_from_values(window)
        } else {
            Ok(window.to_vec())
        }
    }

    fn input_tensor(&self, rows: Vec<Vec<f64>>) -> Result<Tensor> {
        let n = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let shape = if self.spec.uses_features() {
            vec![n, 1, width]
        } else {
            vec![n, width, 1]
        };
        Ok(Tensor::new(shape, data)?)
    }

    /// State distribution for one already-smoothed window.
    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        if !self.loaded {
            return Err(Error::Unloaded);
        }
        let input = self.input_tensor(vec![self.input_row(window)?])?;
        let out = self.graph.predict(&input)?;
        Ok(softmax(out[0].row(0)))
    }

    /// Most likely state for every epoch of a raw series.
    ///
    /// The series is smoothed as during training. Epochs within `context` of
    /// either end take the prediction of the nearest fully covered epoch.
    /// Ties go to the lowest state code.
    pub fn predict_series(&self, series: &LabeledSeries) -> Result<Vec<SleepState>> {
        if !self.loaded {
            return Err(Error::Unloaded);
        }
        let c = self.data.context;
        let n = series.len();
        if n < 2 * c + 1 {
            return Err(Error::SeriesTooShort {
                len: n,
                required: 2 * c + 1,
            });
        }
        let activity = smooth_values(&series.activity(), self.data.smooth_half_width);
        let centers: Vec<usize> = (c..n - c).collect();
        let mut modeled = Vec::with_capacity(centers.len());
        for chunk in centers.chunks(PREDICT_BATCH) {
            let rows = chunk
                .iter()
                .map(|&i| self.input_row(&activity[i - c..=i + c]))
                .collect::<Result<Vec<_>>>()?;
            let out = self.graph.predict(&self.input_tensor(rows)?)?;
            for r in 0..chunk.len() {
                let k = argmax(out[0].row(r));
                modeled.push(SleepState::from_code(k as u8).expect("four-way head"));
            }
        }
        let first = modeled[0];
        let last = *modeled.last().expect("at least one center");
        let mut states = vec![first; c];
        states.extend(modeled);
        states.extend(std::iter::repeat_n(last, c));
        Ok(states)
    }
}
