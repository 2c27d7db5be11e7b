//! Predictors that return a trial's ground truth, for checking the
//! real-time path and the comparison methodology independently of model
//! accuracy.

use std::sync::Arc;

use gaitrt_core::features::{
    angle_channel, moment_channel, vgrf_channel, ChainModels, FeatureError, ModelConfig, ModelName, Predictor,
};
use gaitrt_core::gait::Foot;
use gaitrt_core::signal::{resample_linear, SampleSeries};
use gaitrt_core::synth::SyntheticTrial;

use crate::error::Result;

struct TruthTable {
    start_ms: f64,
    /// Per leg, per 1 kHz sample, the stage outputs.
    rows: [Vec<Vec<f64>>; 2],
}

/// Looks up ground truth by prediction time; times outside the trial hold
/// the nearest sample.
pub struct ReferencePredictor {
    config: ModelConfig,
    table: Arc<TruthTable>,
}

impl Predictor for ReferencePredictor {
    fn n_inputs(&self) -> usize {
        self.config.n_inputs()
    }

    fn n_outputs(&self) -> usize {
        self.config.n_outputs()
    }

    fn window(&self) -> usize {
        self.config.window
    }

    fn predict(&self, time_ms: f64, leg: Foot, _window: &[f64], out: &mut [f64]) -> Result<(), FeatureError> {
        let rows = &self.table.rows[leg.index()];
        let i = ((time_ms - self.table.start_ms).round().max(0.0) as usize).min(rows.len() - 1);
        out.copy_from_slice(&rows[i]);
        Ok(())
    }
}

fn table(truth: &SampleSeries, names: impl Fn(Foot) -> Vec<String>) -> Result<TruthTable> {
    let mut rows = [Vec::new(), Vec::new()];
    for foot in Foot::BOTH {
        let idx: Vec<usize> = names(foot)
            .iter()
            .map(|n| {
                truth
                    .channel_index(&format!("gt_{n}"))
                    .ok_or_else(|| FeatureError::MissingChannel(format!("gt_{n}")))
            })
            .collect::<Result<_, _>>()?;
        rows[foot.index()] = (0..truth.len())
            .map(|r| idx.iter().map(|&c| truth.row(r)[c]).collect())
            .collect();
    }
    Ok(TruthTable {
        start_ms: truth.start_ms(),
        rows,
    })
}

/// GRF, W4 and 5-joint moment stand-ins answering with `trial`'s truth.
pub fn perfect_models(trial: &SyntheticTrial) -> Result<ChainModels> {
    let truth = resample_linear(&trial.truth, 1000.0)?;
    let make = |name: ModelName, t: TruthTable| -> Box<dyn Predictor> {
        Box::new(ReferencePredictor {
            config: ModelConfig::new(name),
            table: Arc::new(t),
        })
    };
    Ok(ChainModels {
        grf: make(ModelName::Grf, table(&truth, |f| vec![vgrf_channel(f)])?),
        angles: make(ModelName::W4, table(&truth, |f| (0..5).map(|j| angle_channel(j, f)).collect())?),
        moments: make(
            ModelName::M5Joint,
            table(&truth, |f| (0..5).map(|j| moment_channel(j, f)).collect())?,
        ),
    })
}
