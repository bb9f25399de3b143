//! Whole sessions in one process, and transcript checks.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha20Rng;

use super::client::client_prepare;
use super::cloud::{run_cloud, CloudOutcome, LinkStats};
use super::config::TrainingConfig;
use super::data::{accuracy, PreparedData};
use super::message::{parse_header, Tag};
use super::transport::{channel_pair, Frame, Role, Transcript, Transport};
use crate::ckks::serial::secret_key_to_bytes;
use crate::ckks::{CkksContext, EvalKeySet, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::io::{Dtype, MetricsRecord, ModelFile};
use crate::linalg::PlainMatrix;

#[derive(Clone, Debug, Default)]
pub struct SessionOptions {
    /// Keep every frame for later inspection.
    pub record_transcript: bool,
    /// Run encrypted inference on the test split after training.
    pub encrypted_inference: bool,
}

#[derive(Clone, Debug)]
pub struct SessionOutcome {
    pub session: u64,
    pub model: ModelFile,
    pub metrics: Vec<MetricsRecord>,
    pub test_accuracy: f64,
    pub encrypted_infer_accuracy: Option<f64>,
    pub client_stats: LinkStats,
    pub cloud: CloudOutcome,
    pub training_ms: u64,
    pub transcript: Option<Transcript>,
}

/// Runs client and cloud on two threads connected by channels.
#[allow(clippy::too_many_arguments)]
pub fn run_local_session(
    ctx: Arc<CkksContext>,
    sk: SecretKey,
    pk: PublicKey,
    eval_keys: EvalKeySet,
    config: TrainingConfig,
    data: &PreparedData,
    rng: ChaCha20Rng,
    opts: &SessionOptions,
) -> Result<SessionOutcome> {
    let transcript = opts.record_transcript.then(|| Arc::new(Mutex::new(Transcript::default())));
    let (client_end, cloud_end) = channel_pair(transcript.clone());
    let (mut client, setup) = client_prepare(ctx, sk, pk, eval_keys, config, data, rng)?;
    let session = client.session;
    let mut link = client.link(client_end);
    let (client_result, cloud_result) = std::thread::scope(|s| {
        let cloud = s.spawn(move || run_cloud(cloud_end));
        let r = (|| {
            client.send_setup(&mut link, setup)?;
            let w = client.serve(&mut link)?;
            let training_ms = client.training_ms();
            let enc_acc = if opts.encrypted_inference {
                let logits = client.infer(&mut link, &data.test.features)?;
                Some(accuracy(&logits, &data.test.labels_onehot))
            } else {
                None
            };
            client.close(&mut link)?;
            Ok((w, training_ms, enc_acc))
        })();
        let stats = link.stats.clone();
        drop(link);
        (r.map(|v| (v, stats)), cloud.join().expect("cloud thread panicked"))
    });
    let ((w, training_ms, encrypted_infer_accuracy), client_stats, cloud) = match (client_result, cloud_result) {
        (Ok((v, stats)), Ok(cloud)) => (v, stats, cloud),
        (_, Err(e)) | (Err(e), _) => return Err(e),
    };
    let test_accuracy = accuracy(&data.test.features.matmul_abt(&w)?, &data.test.labels_onehot);
    let transcript = transcript.map(|t| std::mem::take(&mut *t.lock().expect("transcript lock")));
    Ok(SessionOutcome {
        session,
        model: client.model_file(w, Dtype::F64),
        metrics: client.metrics,
        test_accuracy,
        encrypted_infer_accuracy,
        client_stats,
        cloud,
        training_ms,
        transcript,
    })
}

/// Plays back the client side of a recorded session.
struct ReplayTransport<'a> {
    entries: &'a [(Role, Frame)],
    pos: usize,
}

impl Transport for ReplayTransport<'_> {
    fn send(&mut self, frame: Frame) -> Result<()> {
        match self.entries.get(self.pos) {
            Some((Role::Cloud, f)) if **f == *frame => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::Protocol(format!("cloud frame {} differs from the recording", self.pos))),
        }
    }

    fn recv(&mut self) -> Result<Frame> {
        match self.entries.get(self.pos) {
            Some((Role::Client, f)) => {
                self.pos += 1;
                Ok(f.clone())
            }
            _ => Err(Error::Protocol(format!("recording has no client frame at {}", self.pos))),
        }
    }
}

/// Runs a fresh cloud against the recorded client frames and checks that
/// every frame it sends, the final model included, matches the recording
/// byte for byte.
pub fn replay_cloud(transcript: &Transcript) -> Result<CloudOutcome> {
    let mut t = ReplayTransport { entries: &transcript.entries, pos: 0 };
    let out = run_cloud(&mut t)?;
    if t.pos != transcript.entries.len() {
        return Err(Error::Protocol(format!(
            "replay stopped at frame {} of {}",
            t.pos,
            transcript.entries.len()
        )));
    }
    Ok(out)
}

/// Tags each role may send.
pub fn allowed_tags(role: Role) -> &'static [Tag] {
    match role {
        Role::Client => &[Tag::Control, Tag::EncDatasetUpload, Tag::RefreshResponse, Tag::InferRequest],
        Role::Cloud => &[Tag::Control, Tag::EncLogits, Tag::RefreshRequest, Tag::FinalModel, Tag::InferResponse],
    }
}

/// Byte windows of one width with a bitmap prefilter on the first 8 bytes.
struct WindowSet<const W: usize> {
    bits: Vec<u64>,
    set: HashSet<[u8; W]>,
}

const FILTER_BITS: u32 = 24;

fn filter_index(b: &[u8]) -> usize {
    let v = u64::from_le_bytes(b[..8].try_into().unwrap());
    (v.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> (64 - FILTER_BITS)) as usize
}

impl<const W: usize> WindowSet<W> {
    fn new() -> Self {
        Self { bits: vec![0; 1 << (FILTER_BITS - 6)], set: HashSet::new() }
    }

    fn insert(&mut self, w: [u8; W]) {
        let i = filter_index(&w);
        self.bits[i >> 6] |= 1 << (i & 63);
        self.set.insert(w);
    }

    fn len(&self) -> usize {
        self.set.len()
    }

    /// First offset in `bytes` where a window starts.
    fn find_in(&self, bytes: &[u8]) -> Option<usize> {
        if self.set.is_empty() || bytes.len() < W {
            return None;
        }
        (0..=bytes.len() - W).find(|&o| {
            let i = filter_index(&bytes[o..]);
            self.bits[i >> 6] & (1 << (i & 63)) != 0 && self.set.contains(&bytes[o..o + W])
        })
    }
}

/// Windows made of nothing but a few repeated byte values turn up in any
/// binary stream, so they are not evidence of a leak.
fn informative(w: &[u8]) -> bool {
    let distinct: HashSet<u8> = w.iter().copied().collect();
    distinct.len() >= 4
}

/// Signed-byte ternary windows need both non-zero values present.
fn informative_ternary(w: &[u8]) -> bool {
    w.contains(&1) && w.contains(&0xff)
}

/// Result of [`scan_transcript`].
#[derive(Clone, Debug, Default)]
pub struct ScanReport {
    pub frames: usize,
    pub bytes: u64,
    pub feature_windows: usize,
    pub key_windows: usize,
    pub violations: Vec<String>,
}

impl ScanReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a transcript for plaintext feature values and secret-key
/// material, and checks each frame's tag against its sender.
///
/// Feature needles are adjacent value pairs of every row, as f64 and f32
/// little-endian bytes. Key needles are 32-byte windows of the serialized
/// secret key and of its residues in evaluation form.
pub fn scan_transcript(
    transcript: &Transcript,
    features: &[&PlainMatrix],
    ctx: &CkksContext,
    sk: &SecretKey,
) -> Result<ScanReport> {
    let mut f64_pairs = WindowSet::<16>::new();
    let mut f32_pairs = WindowSet::<8>::new();
    for m in features {
        for r in 0..m.rows() {
            for p in m.row(r).windows(2) {
                let mut w = [0u8; 16];
                w[..8].copy_from_slice(&p[0].to_le_bytes());
                w[8..].copy_from_slice(&p[1].to_le_bytes());
                if informative(&w) {
                    f64_pairs.insert(w);
                }
                let mut w = [0u8; 8];
                w[..4].copy_from_slice(&(p[0] as f32).to_le_bytes());
                w[4..].copy_from_slice(&(p[1] as f32).to_le_bytes());
                if informative(&w) {
                    f32_pairs.insert(w);
                }
            }
        }
    }
    let mut key = WindowSet::<32>::new();
    let packed = secret_key_to_bytes(ctx, sk);
    let body = &packed[packed.len() - sk.coefficients().len()..];
    for w in body.windows(32).step_by(8) {
        if w.iter().filter(|&&b| b != 0).count() >= 12 && informative_ternary(w) {
            key.insert(w.try_into().unwrap());
        }
    }
    let residues: Vec<u8> = sk.poly.limbs.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    for w in residues.windows(32).step_by(8) {
        if informative(w) {
            key.insert(w.try_into().unwrap());
        }
    }
    if key.len() == 0 {
        return Err(Error::Config("secret key yields no informative windows".into()));
    }
    let mut report = ScanReport {
        feature_windows: f64_pairs.len() + f32_pairs.len(),
        key_windows: key.len(),
        ..Default::default()
    };
    for (i, (role, frame)) in transcript.entries.iter().enumerate() {
        report.frames += 1;
        report.bytes += frame.len() as u64;
        let mut flag = |what: String| report.violations.push(format!("frame {i} from {role:?}: {what}"));
        match parse_header(frame) {
            Ok((h, _)) if !allowed_tags(*role).contains(&h.tag) => flag(format!("{:?} is not sent by this role", h.tag)),
            Ok(_) => {}
            Err(e) => flag(format!("unparseable: {e}")),
        }
        if let Some(o) = f64_pairs.find_in(frame) {
            flag(format!("f64 feature values at offset {o}"));
        }
        if let Some(o) = f32_pairs.find_in(frame) {
            flag(format!("f32 feature values at offset {o}"));
        }
        if let Some(o) = key.find_in(frame) {
            flag(format!("secret-key bytes at offset {o}"));
        }
    }
    Ok(report)
}
