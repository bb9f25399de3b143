//! The client role: owns the keys and the data, serves refreshes and
//! validation, decrypts the final model.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::cloud::{unexpected, Link};
use super::config::TrainingConfig;
use super::data::{accuracy, batch_slice, plan_batches, PreparedData};
use super::message::{Control, DatasetUpload, EncBatch, Message};
use super::transport::Transport;
use crate::approx::cross_entropy;
use crate::ckks::{CkksContext, EvalKeySet, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::io::{Dtype, MetricsRecord, ModelFile, Standardization};
use crate::linalg::{decrypt_matrix, encrypt_matrix, reencrypt, EncMatrix, PlainMatrix, TileLayout};

/// Client keys and secrets for one session.
pub struct ClientState {
    pub ctx: Arc<CkksContext>,
    pub session: u64,
    pub config: TrainingConfig,
    sk: SecretKey,
    pk: PublicKey,
    rng: ChaCha20Rng,
    stride: usize,
    val_labels: PlainMatrix,
    stats: Standardization,
    pub metrics: Vec<MetricsRecord>,
    started: Instant,
}

/// Encrypts the prepared data and builds the two setup messages, `Config`
/// and `EncDatasetUpload`. The evaluation keys move into the upload.
pub fn client_prepare(
    ctx: Arc<CkksContext>,
    sk: SecretKey,
    pk: PublicKey,
    eval_keys: EvalKeySet,
    config: TrainingConfig,
    data: &PreparedData,
    mut rng: ChaCha20Rng,
) -> Result<(ClientState, [Message; 2])> {
    config.validate()?;
    if config.classes() != data.classes() {
        return Err(Error::Config(format!(
            "config has {} classes, data has {}",
            config.classes(),
            data.classes()
        )));
    }
    if data.classes() > data.dim() {
        return Err(Error::Config(format!(
            "{} classes exceed the feature dimension {}",
            data.classes(),
            data.dim()
        )));
    }
    let top = ctx.max_level();
    let stride = TileLayout::stride_for(&[data.dim(), data.classes()]);
    let plan = plan_batches(data.train.len(), config.batch_size);
    let mut batches = Vec::with_capacity(plan.batches.len());
    for range in plan.batches {
        let real_rows = range.len();
        let (x, y, _) = batch_slice(&data.train, range, plan.rows);
        batches.push(EncBatch {
            x: encrypt_matrix(&ctx, &pk, &x, stride, top, &mut rng)?,
            y: encrypt_matrix(&ctx, &pk, &y, stride, top, &mut rng)?,
            real_rows,
        });
    }
    let val_x = encrypt_matrix(&ctx, &pk, &data.val.features, stride, top, &mut rng)?;
    let session = rng.random::<u64>();
    let config_msg = Message::Control(Control::Config(config.to_json()));
    let upload = Message::EncDatasetUpload(Box::new(DatasetUpload {
        public_key: pk.clone(),
        eval_keys,
        batches,
        val_x,
    }));
    let state = ClientState {
        ctx,
        session,
        config,
        sk,
        pk,
        rng,
        stride,
        val_labels: data.val.labels_onehot.clone(),
        stats: data.train.stats.clone(),
        metrics: Vec::new(),
        started: Instant::now(),
    };
    Ok((state, [config_msg, upload]))
}

impl ClientState {
    /// Restores a client from its stored secrets, e.g. for a separate
    /// validation process in file mode.
    #[allow(clippy::too_many_arguments)]
    pub fn resume(
        ctx: Arc<CkksContext>,
        session: u64,
        config: TrainingConfig,
        sk: SecretKey,
        pk: PublicKey,
        val_labels: PlainMatrix,
        stats: Standardization,
        rng: ChaCha20Rng,
    ) -> Self {
        let stride = TileLayout::stride_for(&[stats.means.len(), config.classes()]);
        Self {
            ctx,
            session,
            config,
            sk,
            pk,
            rng,
            stride,
            val_labels,
            stats,
            metrics: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.sk
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn link<T: Transport>(&self, transport: T) -> Link<T> {
        Link::new(self.ctx.clone(), self.session, transport)
    }

    /// Sends `Config` and the upload.
    pub fn send_setup<T: Transport>(&mut self, link: &mut Link<T>, setup: [Message; 2]) -> Result<()> {
        self.started = Instant::now();
        for m in setup {
            link.send(&m)?;
        }
        Ok(())
    }

    fn refresh<T: Transport>(&mut self, link: &mut Link<T>, matrices: Vec<EncMatrix>, request_bytes: u64) -> Result<()> {
        let fresh = matrices
            .iter()
            .map(|m| reencrypt(&self.ctx, &self.sk, &self.pk, m, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let sent = link.send(&Message::RefreshResponse { matrices: fresh })?;
        link.stats.refresh_count += 1;
        link.stats.refresh_bytes += request_bytes + sent;
        Ok(())
    }

    fn validate(&mut self, epoch: u32, t: u64, logits: &EncMatrix, refreshes: u64) -> Result<MetricsRecord> {
        let plain = decrypt_matrix(&self.ctx, &self.sk, logits);
        if plain.rows() != self.val_labels.rows() || plain.cols() != self.val_labels.cols() {
            return Err(Error::Shape(format!("validation logits {}x{}", plain.rows(), plain.cols())));
        }
        let rec = MetricsRecord {
            epoch,
            t,
            val_loss: cross_entropy(&plain, &self.val_labels)?,
            val_accuracy: accuracy(&plain, &self.val_labels),
            refresh_count: refreshes,
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: val loss {:.4}, val accuracy {:.4}, {refreshes} refreshes",
            rec.val_loss,
            rec.val_accuracy
        );
        Ok(rec)
    }

    /// Answers refreshes and validation until the final model arrives, then
    /// returns it decrypted.
    pub fn serve<T: Transport>(&mut self, link: &mut Link<T>) -> Result<PlainMatrix> {
        let r = self.serve_inner(link);
        if let Err(e) = &r {
            if !matches!(e, Error::Protocol(m) if m.starts_with("peer aborted")) {
                link.abort(e);
            }
        }
        r
    }

    fn serve_inner<T: Transport>(&mut self, link: &mut Link<T>) -> Result<PlainMatrix> {
        loop {
            let (msg, n) = link.recv()?;
            match msg {
                Message::RefreshRequest { matrices, .. } => self.refresh(link, matrices, n)?,
                Message::EncLogits { epoch, t, logits } => {
                    let rec = self.validate(epoch, t, &logits, link.stats.refresh_count)?;
                    self.metrics.push(rec);
                    link.send(&Message::Control(Control::Ack))?;
                }
                Message::FinalModel(w) => {
                    let w = decrypt_matrix(&self.ctx, &self.sk, &w);
                    if w.rows() != self.config.classes() || w.cols() != self.stats.means.len() {
                        return Err(Error::Shape(format!("final model {}x{}", w.rows(), w.cols())));
                    }
                    return Ok(w);
                }
                other => return Err(unexpected(&other, "RefreshRequest, EncLogits or FinalModel")),
            }
        }
    }

    /// Encrypted inference on preprocessed features; returns decrypted logits.
    pub fn infer<T: Transport>(&mut self, link: &mut Link<T>, x: &PlainMatrix) -> Result<PlainMatrix> {
        let top = self.ctx.max_level();
        let ex = encrypt_matrix(&self.ctx, &self.pk, x, self.stride, top, &mut self.rng)?;
        link.send(&Message::InferRequest(ex))?;
        loop {
            let (msg, n) = link.recv()?;
            match msg {
                Message::RefreshRequest { matrices, .. } => self.refresh(link, matrices, n)?,
                Message::InferResponse(l) => return Ok(decrypt_matrix(&self.ctx, &self.sk, &l)),
                other => return Err(unexpected(&other, "InferResponse")),
            }
        }
    }

    pub fn close<T: Transport>(&mut self, link: &mut Link<T>) -> Result<()> {
        link.send(&Message::Control(Control::Close)).map(|_| ())
    }

    /// Wraps decrypted weights with the preprocessing they expect.
    pub fn model_file(&self, weights: PlainMatrix, dtype: Dtype) -> ModelFile {
        ModelFile { weights, dtype, stats: Some(self.stats.clone()), params_digest: self.ctx.digest() }
    }

    pub fn training_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }
}
