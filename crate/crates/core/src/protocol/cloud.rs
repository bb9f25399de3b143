//! The cloud role: trains on ciphertexts, holds no secret key.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::message::{decode, encode, peek_config, Control, DatasetUpload, EncBatch, Message};
use super::transport::Transport;
use crate::approx::{nag_step, Batch, NagSchedule, NagState};
use crate::ckks::{CkksContext, Evaluator};
use crate::error::{Error, Result};
use crate::linalg::{matmul_abt, trivial_matrix, EncMatrix, PlainMatrix, RefreshPurpose, Refresher};

/// Traffic counters of one side of a session.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Refresh round trips of any purpose.
    pub refresh_count: u64,
    /// Refreshes forced by the refresh interval.
    pub forced_refreshes: u64,
    /// Bytes of refresh requests and responses together.
    pub refresh_bytes: u64,
}

/// Framing, session checks and byte counting over a transport.
pub struct Link<T> {
    pub ctx: Arc<CkksContext>,
    pub session: u64,
    pub transport: T,
    pub stats: LinkStats,
}

impl<T: Transport> Link<T> {
    pub fn new(ctx: Arc<CkksContext>, session: u64, transport: T) -> Self {
        Self { ctx, session, transport, stats: LinkStats::default() }
    }

    /// Sends `msg`, returning the frame size.
    pub fn send(&mut self, msg: &Message) -> Result<u64> {
        let frame = encode(&self.ctx, self.session, msg);
        let n = frame.len() as u64;
        log::debug!("send {} ({n} bytes)", msg.name());
        self.transport.send(Arc::new(frame))?;
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += n;
        Ok(n)
    }

    /// Receives one message; an `Abort` from the peer becomes an error.
    pub fn recv(&mut self) -> Result<(Message, u64)> {
        let frame = self.transport.recv()?;
        let n = frame.len() as u64;
        let msg = decode(&self.ctx, self.session, &frame)?;
        log::debug!("recv {} ({n} bytes)", msg.name());
        self.stats.messages_received += 1;
        self.stats.bytes_received += n;
        if let Message::Control(Control::Abort(why)) = &msg {
            return Err(Error::Protocol(format!("peer aborted: {why}")));
        }
        Ok((msg, n))
    }

    pub fn expect_ack(&mut self) -> Result<()> {
        match self.recv()?.0 {
            Message::Control(Control::Ack) => Ok(()),
            other => Err(unexpected(&other, "Ack")),
        }
    }

    /// Best-effort abort notice before giving up.
    pub fn abort(&mut self, err: &Error) {
        let _ = self.send(&Message::Control(Control::Abort(err.to_string())));
    }
}

pub(crate) fn unexpected(msg: &Message, wanted: &str) -> Error {
    Error::Protocol(format!("unexpected {} message, expected {wanted}", msg.name()))
}

fn same_shape(a: &EncMatrix, b: &EncMatrix) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols() && a.layout.stride == b.layout.stride
}

/// The cloud has no secret key, so it restores depth by asking the client.
impl<T: Transport> Refresher for Link<T> {
    fn refresh_many(&mut self, ms: Vec<EncMatrix>, purpose: RefreshPurpose) -> Result<Vec<EncMatrix>> {
        let sent = self.send(&Message::RefreshRequest { purpose, matrices: ms.clone() })?;
        let (reply, got) = self.recv()?;
        let Message::RefreshResponse { matrices } = reply else {
            return Err(unexpected(&reply, "RefreshResponse"));
        };
        if matrices.len() != ms.len() || !ms.iter().zip(&matrices).all(|(a, b)| same_shape(a, b)) {
            return Err(Error::Protocol("refresh response does not match the request".into()));
        }
        let top = self.ctx.max_level();
        if matrices.iter().any(|m| m.level() != top) {
            return Err(Error::Protocol("refresh response below the top level".into()));
        }
        self.stats.refresh_count += 1;
        self.stats.refresh_bytes += sent + got;
        Ok(matrices)
    }
}

/// What the cloud did in one session.
#[derive(Clone, Debug)]
pub struct CloudOutcome {
    pub config: TrainingConfig,
    pub steps: u64,
    pub stats: LinkStats,
    pub inferences: u64,
}

fn check_upload(up: &DatasetUpload, cfg: &TrainingConfig) -> Result<(usize, usize)> {
    let first = up.batches.first().ok_or_else(|| Error::Empty("upload has no batches".into()))?;
    let (d, k, stride) = (first.x.cols(), first.y.cols(), first.x.layout.stride);
    if k != cfg.classes() {
        return Err(Error::Shape(format!("labels have {k} columns, config has {} classes", cfg.classes())));
    }
    for (i, b) in up.batches.iter().enumerate() {
        let ok = b.x.cols() == d
            && b.y.cols() == k
            && b.x.rows() == b.y.rows()
            && b.x.layout.stride == stride
            && b.y.layout.stride == stride
            && b.real_rows >= 1
            && b.real_rows <= b.x.rows();
        if !ok {
            return Err(Error::Shape(format!("batch {i} is inconsistent with batch 0")));
        }
    }
    if up.val_x.cols() != d || up.val_x.layout.stride != stride {
        return Err(Error::Shape("validation features do not match the batches".into()));
    }
    Ok((d, stride))
}

/// Receives `Config` and the upload, returning the context, session id,
/// configuration and upload.
#[allow(clippy::type_complexity)]
fn accept<T: Transport>(transport: &mut T) -> Result<(Arc<CkksContext>, u64, TrainingConfig, Box<DatasetUpload>, u64)> {
    let frame = transport.recv()?;
    let mut bytes = frame.len() as u64;
    let (header, json) = peek_config(&frame)?;
    let config = TrainingConfig::from_json(&json)?;
    let ctx = Arc::new(CkksContext::from_preset(&config.scheme_preset)?);
    if header.digest != ctx.digest() {
        return Err(Error::DigestMismatch);
    }
    let frame = transport.recv()?;
    bytes += frame.len() as u64;
    match decode(&ctx, header.session, &frame)? {
        Message::EncDatasetUpload(up) => Ok((ctx, header.session, config, up, bytes)),
        other => Err(unexpected(&other, "EncDatasetUpload")),
    }
}

/// Runs the cloud side of a session to completion.
pub fn run_cloud<T: Transport>(mut transport: T) -> Result<CloudOutcome> {
    let (ctx, session, config, upload, bytes) = accept(&mut transport)?;
    let mut link = Link::new(ctx, session, transport);
    link.stats.messages_received = 2;
    link.stats.bytes_received = bytes;
    match train(&mut link, &config, *upload) {
        Ok((steps, inferences)) => Ok(CloudOutcome { config, steps, stats: link.stats, inferences }),
        Err(e) => {
            link.abort(&e);
            Err(e)
        }
    }
}

fn train<T: Transport>(link: &mut Link<T>, config: &TrainingConfig, upload: DatasetUpload) -> Result<(u64, u64)> {
    let (d, stride) = check_upload(&upload, config)?;
    let DatasetUpload { eval_keys, batches, val_x, .. } = upload;
    let ctx = link.ctx.clone();
    let ev = Evaluator::new(ctx.clone(), Arc::new(eval_keys));
    let zero = trivial_matrix(&ctx, &PlainMatrix::zeros(config.classes(), d), stride, ctx.max_level())?;
    let mut state = NagState { w: zero.clone(), v: zero };
    let mut schedule = NagSchedule::default();
    let masks: Vec<Vec<f64>> = batches.iter().map(mask_for).collect();
    for epoch in 1..=config.epochs {
        for (b, mask) in batches.iter().zip(&masks) {
            let batch = Batch { x: &b.x, y: &b.y, row_mask: mask };
            let gamma = schedule.advance();
            state = nag_step(&ev, state, &batch, gamma, config.learning_rate, &config.softmax, link)?;
            if schedule.t % config.refresh_interval as u64 == 0 {
                let [w, v]: [EncMatrix; 2] = link
                    .refresh_many(vec![state.w, state.v], RefreshPurpose::Weights)?
                    .try_into()
                    .map_err(|_| Error::Protocol("refresh returned the wrong count".into()))?;
                link.stats.forced_refreshes += 1;
                state = NagState { w, v };
            }
        }
        let logits = matmul_abt(&ev, &val_x, &state.w, link)?;
        link.send(&Message::EncLogits { epoch, t: schedule.t, logits })?;
        link.expect_ack()?;
        log::info!("cloud: epoch {epoch} done at step {}", schedule.t);
    }
    link.send(&Message::FinalModel(state.w.clone()))?;
    let mut inferences = 0;
    loop {
        match link.recv()?.0 {
            Message::InferRequest(x) => {
                if x.cols() != d || x.layout.stride != stride {
                    return Err(Error::Shape(format!("inference input {}x{}", x.rows(), x.cols())));
                }
                let logits = matmul_abt(&ev, &x, &state.w, link)?;
                link.send(&Message::InferResponse(logits))?;
                inferences += 1;
            }
            Message::Control(Control::Close) => return Ok((schedule.t, inferences)),
            other => return Err(unexpected(&other, "InferRequest or Close")),
        }
    }
}

fn mask_for(b: &EncBatch) -> Vec<f64> {
    (0..b.x.rows()).map(|r| if r < b.real_rows { 1.0 } else { 0.0 }).collect()
}
