//! Cleartext trainer with the same batching and schedule as the encrypted
//! session.

use std::time::Instant;

use super::config::TrainingConfig;
use super::data::{accuracy, batch_slice, plan_batches, PreparedData};
use crate::approx::{cross_entropy, plain_nag_step, Batch, NagSchedule, NagState, SoftmaxKind};
use crate::error::Result;
use crate::io::MetricsRecord;
use crate::linalg::PlainMatrix;

#[derive(Clone, Debug)]
pub struct OracleRun {
    pub weights: PlainMatrix,
    pub metrics: Vec<MetricsRecord>,
    pub test_accuracy: f64,
    pub wall_ms: u64,
    /// Largest logit magnitude the softmax saw.
    pub max_logit: f64,
}

/// Trains in the clear with `softmax`. Logits beyond 90% of the configured
/// domain bound are logged as warnings once per epoch. Zero epochs return
/// the initial zero weights.
pub fn plaintext_oracle_train(data: &PreparedData, config: &TrainingConfig, softmax: &SoftmaxKind) -> Result<OracleRun> {
    TrainingConfig { epochs: config.epochs.max(1), ..config.clone() }.validate()?;
    let started = Instant::now();
    let (k, d) = (data.classes(), data.dim());
    let mut state = NagState { w: PlainMatrix::zeros(k, d), v: PlainMatrix::zeros(k, d) };
    let mut schedule = NagSchedule::default();
    let plan = plan_batches(data.train.len(), config.batch_size);
    let batches: Vec<_> = plan.batches.iter().map(|r| batch_slice(&data.train, r.clone(), plan.rows)).collect();
    let bound = config.softmax.domain_bound;
    let mut metrics = Vec::new();
    let mut max_logit = 0.0f64;
    for epoch in 1..=config.epochs {
        let mut epoch_max = 0.0f64;
        for (x, y, mask) in &batches {
            epoch_max = epoch_max.max(x.matmul_abt(&state.v)?.max_abs());
            let batch = Batch { x, y, row_mask: mask };
            let gamma = schedule.advance();
            state = plain_nag_step(&state, &batch, gamma, config.learning_rate, softmax)?;
        }
        if epoch_max > 0.9 * bound {
            log::warn!("epoch {epoch}: logit magnitude {epoch_max:.3} is near the softmax domain bound {bound}");
        }
        max_logit = max_logit.max(epoch_max);
        let logits = data.val.features.matmul_abt(&state.w)?;
        metrics.push(MetricsRecord {
            epoch,
            t: schedule.t,
            val_loss: cross_entropy(&logits, &data.val.labels_onehot)?,
            val_accuracy: accuracy(&logits, &data.val.labels_onehot),
            refresh_count: 0,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let test_logits = data.test.features.matmul_abt(&state.w)?;
    Ok(OracleRun {
        test_accuracy: accuracy(&test_logits, &data.test.labels_onehot),
        weights: state.w,
        metrics,
        wall_ms: started.elapsed().as_millis() as u64,
        max_logit,
    })
}
