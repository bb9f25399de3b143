use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ciphertune::approx::{SoftmaxConfig, SoftmaxKind};
use ciphertune::ckks::serial::{
    eval_keys_from_bytes, eval_keys_to_bytes, public_key_from_bytes, public_key_to_bytes, secret_key_from_bytes,
    secret_key_to_bytes,
};
use ciphertune::ckks::{keygen, CkksContext, EvalKeySet, PublicKey, SecretKey};
use ciphertune::io::{
    read_features, read_labels, read_model, synth_data, write_atomic, write_metrics, DatasetSummary, Dtype,
    FeatureFile, LabelFile, ModelFile, OracleComparison, RunReport, SynthSpec, REPORT_SCHEMA,
};
use ciphertune::linalg::{decrypt_matrix, PlainMatrix};
use ciphertune::protocol::{
    client_prepare, decode, plaintext_oracle_train, prepare, run_cloud, run_local_session, split_indices, ClientState,
    FileTransport, Message, PreparedData, SessionOptions, Transcript, TrainingConfig,
};
use ciphertune::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::args::*;

const SECRET_KEY: &str = "secret.key";
const PUBLIC_KEY: &str = "public.key";
const EVAL_KEY: &str = "eval.key";
const KEY_INFO: &str = "keys.json";
const CLIENT_STATE: &str = "client-state.json";

/// Offsets the training seed so data shuffling, key generation and
/// encryption draw from unrelated streams.
fn stream(seed: u64, purpose: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const ENCRYPTION_STREAM: u64 = 1;
const VALIDATE_STREAM: u64 = 2;

#[derive(Serialize, Deserialize)]
struct KeyInfo {
    preset: String,
    seed: u64,
}

struct KeySet {
    preset: String,
    ctx: Arc<CkksContext>,
    sk: SecretKey,
    pk: PublicKey,
    evk: Option<EvalKeySet>,
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| json_err(path, e))?;
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_context(path, e))
}

fn load_keys(dir: &Path, with_eval: bool) -> Result<KeySet> {
    let info: KeyInfo = read_json(&dir.join(KEY_INFO))?;
    let ctx = Arc::new(CkksContext::from_preset(&info.preset)?);
    let sk = secret_key_from_bytes(&ctx, &read_file(&dir.join(SECRET_KEY))?)?;
    let pk = public_key_from_bytes(&ctx, &read_file(&dir.join(PUBLIC_KEY))?)?;
    let evk = if with_eval {
        Some(eval_keys_from_bytes(&ctx, &read_file(&dir.join(EVAL_KEY))?)?)
    } else {
        None
    };
    Ok(KeySet { preset: info.preset, ctx, sk, pk, evk })
}

pub fn keygen_cmd(a: &KeygenArgs) -> Result<()> {
    let ctx = CkksContext::from_preset(&a.preset)?;
    let (sk, pk, evk) = keygen(&ctx, a.seed);
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join(SECRET_KEY), &secret_key_to_bytes(&ctx, &sk))?;
    write_atomic(&a.out.join(PUBLIC_KEY), &public_key_to_bytes(&ctx, &pk))?;
    write_atomic(&a.out.join(EVAL_KEY), &eval_keys_to_bytes(&ctx, &evk))?;
    write_json(&a.out.join(KEY_INFO), &KeyInfo { preset: a.preset.clone(), seed: a.seed })?;
    println!("keys for preset {} written to {}", a.preset, a.out.display());
    Ok(())
}

fn load_data(d: &DataFlags, train_seed: u64) -> Result<(FeatureFile, LabelFile)> {
    match (&d.features, &d.labels) {
        (Some(f), Some(l)) => Ok((read_features(f)?, read_labels(l)?)),
        _ => {
            let s = &d.synth;
            let spec = SynthSpec {
                classes: s.classes,
                dim: s.dim,
                n: s.n,
                seed: s.data_seed.unwrap_or(train_seed),
                separation: s.separation,
            };
            log::info!(
                "synthetic data: {} classes, {} dims, {} rows, separation {}",
                spec.classes,
                spec.dim,
                spec.n,
                spec.separation
            );
            synth_data(&spec)
        }
    }
}

fn build_config(t: &TrainFlags, classes: usize, preset: &str) -> Result<TrainingConfig> {
    let base = match &t.dataset {
        Some(name) => TrainingConfig::for_dataset(name, classes)?,
        None => TrainingConfig::new(classes),
    };
    let softmax = match t.domain_bound {
        Some(b) => SoftmaxConfig::derived(classes, b, base.softmax.exp_squarings),
        None => base.softmax.clone(),
    };
    let cfg = TrainingConfig {
        epochs: t.epochs.unwrap_or(base.epochs),
        learning_rate: t.lr.unwrap_or(base.learning_rate),
        batch_size: t.batch.unwrap_or(base.batch_size),
        refresh_interval: t.refresh_interval,
        seed: t.seed,
        scheme_preset: preset.to_string(),
        softmax,
        ..base
    };
    cfg.validate()?;
    println!(
        "config: epochs {}, lr {}, batch {}, refresh interval {}, seed {}, preset {}",
        cfg.epochs, cfg.learning_rate, cfg.batch_size, cfg.refresh_interval, cfg.seed, cfg.scheme_preset
    );
    Ok(cfg)
}

/// Prepares the splits and writes the raw test split next to the outputs,
/// so `infer` can score a model file against it.
fn prepare_and_keep_test(x: &FeatureFile, y: &LabelFile, cfg: &TrainingConfig, out: &Path) -> Result<PreparedData> {
    let data = prepare(x, y, cfg.split, cfg.seed)?;
    let [_, _, test] = split_indices(x.features.rows(), cfg.split, cfg.seed)?;
    std::fs::create_dir_all(out)?;
    let tx = FeatureFile { features: x.features.select_rows(&test), dtype: x.dtype, stats: None };
    let ty = LabelFile { labels: test.iter().map(|&i| y.labels[i]).collect(), class_count: y.class_count };
    write_atomic(&out.join("test-features.btft"), &tx.to_bytes())?;
    write_atomic(&out.join("test-labels.btlb"), &ty.to_bytes())?;
    Ok(data)
}

fn summary(d: &PreparedData) -> DatasetSummary {
    DatasetSummary {
        n_train: d.train.len(),
        n_val: d.val.len(),
        n_test: d.test.len(),
        dim: d.dim(),
        classes: d.classes(),
    }
}

/// Private client state that a separate `validate` or `decrypt-model`
/// process needs.
#[derive(Serialize, Deserialize)]
struct StoredClient {
    session: u64,
    config: TrainingConfig,
    data: PreparedData,
}

pub fn encrypt_cmd(a: &EncryptArgs) -> Result<()> {
    let keys = load_keys(&a.keys, true)?;
    let (x, y) = load_data(&a.data, a.train.seed)?;
    let cfg = build_config(&a.train, y.class_count as usize, &keys.preset)?;
    let data = prepare_and_keep_test(&x, &y, &cfg, &a.out)?;
    let evk = keys.evk.expect("loaded with eval keys");
    let (client, setup) =
        client_prepare(keys.ctx.clone(), keys.sk, keys.pk, evk, cfg.clone(), &data, stream(cfg.seed, ENCRYPTION_STREAM))?;
    let mut transport = FileTransport::new(&a.session, 0)?;
    let mut link = client.link(&mut transport);
    for m in &setup {
        link.send(m)?;
    }
    write_json(&a.out.join(CLIENT_STATE), &StoredClient { session: client.session, config: cfg, data })?;
    println!(
        "session {:016x}: uploaded {} bytes to {}",
        client.session,
        link.stats.bytes_sent,
        a.session.display()
    );
    Ok(())
}

pub fn train_cloud_cmd(a: &TrainCloudArgs) -> Result<()> {
    let transport = FileTransport::new(&a.session, 0)?.with_timeout(Duration::from_secs(a.timeout));
    let out = run_cloud(transport)?;
    println!(
        "cloud: {} steps, {} refreshes ({} forced), {} refresh bytes, {} inferences",
        out.steps, out.stats.refresh_count, out.stats.forced_refreshes, out.stats.refresh_bytes, out.inferences
    );
    if let Some(p) = &a.out {
        write_json(p, &serde_json::json!({ "steps": out.steps, "inferences": out.inferences, "stats": out.stats }))?;
    }
    Ok(())
}

fn resume(keys: &Path, state_dir: &Path) -> Result<(ClientState, StoredClient)> {
    let k = load_keys(keys, false)?;
    let stored: StoredClient = read_json(&state_dir.join(CLIENT_STATE))?;
    if stored.config.scheme_preset != k.preset {
        return Err(Error::DigestMismatch);
    }
    let client = ClientState::resume(
        k.ctx,
        stored.session,
        stored.config.clone(),
        k.sk,
        k.pk,
        stored.data.val.labels_onehot.clone(),
        stored.data.train.stats.clone(),
        stream(stored.config.seed, VALIDATE_STREAM),
    );
    Ok((client, stored))
}

pub fn validate_cmd(a: &ValidateArgs) -> Result<()> {
    let (mut client, _) = resume(&a.keys, &a.state)?;
    let transport = FileTransport::new(&a.session, 2)?.with_timeout(Duration::from_secs(a.timeout));
    let mut link = client.link(transport);
    client.serve(&mut link)?;
    client.close(&mut link)?;
    let path = a.state.join("metrics.jsonl");
    write_metrics(&path, &client.metrics)?;
    println!(
        "validation done: {} epochs, {} refreshes served, metrics in {}",
        client.metrics.len(),
        link.stats.refresh_count,
        path.display()
    );
    Ok(())
}

pub fn decrypt_model_cmd(a: &DecryptModelArgs) -> Result<()> {
    let (client, stored) = resume(&a.keys, &a.state)?;
    let transcript = Transcript::from_dir(&a.session)?;
    let w = transcript
        .entries
        .iter()
        .rev()
        .find_map(|(_, f)| match decode(&client.ctx, client.session, f) {
            Ok(Message::FinalModel(w)) => Some(w),
            _ => None,
        })
        .ok_or_else(|| Error::Protocol(format!("no final model in {}", a.session.display())))?;
    let w = decrypt_matrix(&client.ctx, client.secret_key(), &w);
    if w.rows() != stored.data.classes() || w.cols() != stored.data.dim() {
        return Err(Error::Shape(format!("final model {}x{}", w.rows(), w.cols())));
    }
    let model = client.model_file(w, Dtype::F64);
    write_atomic(&a.out, &model.to_bytes())?;
    let acc = ciphertune::protocol::accuracy(
        &stored.data.test.features.matmul_abt(&model.weights)?,
        &stored.data.test.labels_onehot,
    );
    println!("model written to {}; test accuracy {:.4}", a.out.display(), acc);
    Ok(())
}

/// Returns predicted classes and, with labels, accuracy.
pub fn predict(model: &ModelFile, x: &FeatureFile, y: Option<&LabelFile>) -> Result<(Vec<usize>, Option<f64>)> {
    let pred = model.logits(&x.features)?.argmax_rows();
    let acc = match y {
        Some(y) => {
            if y.labels.len() != pred.len() {
                return Err(Error::Shape(format!("{} labels for {} rows", y.labels.len(), pred.len())));
            }
            let hits = pred.iter().zip(&y.labels).filter(|(p, l)| **p == **l as usize).count();
            Some(hits as f64 / pred.len().max(1) as f64)
        }
        None => None,
    };
    Ok((pred, acc))
}

pub fn infer_cmd(a: &InferArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let x = read_features(&a.features)?;
    let y = a.labels.as_deref().map(read_labels).transpose()?;
    let (pred, acc) = predict(&model, &x, y.as_ref())?;
    if let Some(out) = &a.out {
        let k = model.weights.rows() as u32;
        write_atomic(out, &LabelFile { labels: pred.iter().map(|&p| p as u16).collect(), class_count: k }.to_bytes())?;
    }
    match acc {
        Some(acc) => println!("{} rows, accuracy {acc:.4}", pred.len()),
        None => println!("{} rows predicted", pred.len()),
    }
    Ok(())
}

pub fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let (x, y) = synth_data(&SynthSpec {
        classes: a.classes,
        dim: a.dim,
        n: a.n,
        seed: a.seed,
        separation: a.separation,
    })?;
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("features.btft"), &x.to_bytes())?;
    write_atomic(&a.out.join("labels.btlb"), &y.to_bytes())?;
    println!("{} rows of {} features in {} classes written to {}", a.n, a.dim, a.classes, a.out.display());
    Ok(())
}

fn oracle_row(data: &PreparedData, cfg: &TrainingConfig, w: &PlainMatrix) -> Result<OracleComparison> {
    let run = plaintext_oracle_train(data, cfg, &SoftmaxKind::Exact)?;
    Ok(OracleComparison {
        softmax: "exact".into(),
        test_accuracy: run.test_accuracy,
        wall_ms: run.wall_ms,
        max_weight_divergence: run.weights.max_abs_diff(w)?,
    })
}

fn out_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join("model.btmd"), dir.join("report.json"), dir.join("metrics.jsonl"))
}

pub fn train_local_cmd(a: &TrainLocalArgs) -> Result<()> {
    let (x, y) = load_data(&a.data, a.train.seed)?;
    let cfg = build_config(&a.train, y.class_count as usize, &a.preset)?;
    let data = prepare_and_keep_test(&x, &y, &cfg, &a.out)?;
    let ctx = Arc::new(CkksContext::from_preset(&cfg.scheme_preset)?);
    let (sk, pk, evk) = keygen(&ctx, cfg.seed);
    let opts = SessionOptions { record_transcript: a.transcript, encrypted_inference: a.encrypted_infer };
    let out = run_local_session(ctx.clone(), sk, pk, evk, cfg.clone(), &data, stream(cfg.seed, ENCRYPTION_STREAM), &opts)?;
    let oracle = if a.no_oracle { None } else { Some(oracle_row(&data, &cfg, &out.model.weights)?) };
    let report = RunReport {
        schema_version: REPORT_SCHEMA,
        mode: "local".into(),
        config: cfg,
        dataset: summary(&data),
        epochs: out.metrics.clone(),
        final_test_accuracy: out.test_accuracy,
        encrypted_infer_accuracy: out.encrypted_infer_accuracy,
        training_wall_ms: out.training_ms,
        refresh_count: out.cloud.stats.refresh_count,
        refresh_bytes: out.cloud.stats.refresh_bytes,
        oracle,
    };
    let (model_path, report_path, metrics_path) = out_paths(&a.out);
    write_atomic(&model_path, &out.model.to_bytes())?;
    write_metrics(&metrics_path, &out.metrics)?;
    report.write(&report_path)?;
    if let Some(t) = &out.transcript {
        t.save(&a.out.join("transcript.bttr"))?;
    }
    print_report(&report);
    Ok(())
}

pub fn train_plain_cmd(a: &TrainPlainArgs) -> Result<()> {
    let (x, y) = load_data(&a.data, a.train.seed)?;
    let cfg = build_config(&a.train, y.class_count as usize, "desk")?;
    let data = prepare_and_keep_test(&x, &y, &cfg, &a.out)?;
    let (softmax, name) = match a.softmax {
        SoftmaxArg::Exact => (SoftmaxKind::Exact, "plain"),
        SoftmaxArg::Approx => (SoftmaxKind::Approx(cfg.softmax.clone()), "plain-approx"),
    };
    let run = plaintext_oracle_train(&data, &cfg, &softmax)?;
    let model = ModelFile {
        weights: run.weights.clone(),
        dtype: Dtype::F64,
        stats: Some(data.train.stats.clone()),
        params_digest: [0; 32],
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA,
        mode: name.into(),
        config: cfg,
        dataset: summary(&data),
        epochs: run.metrics.clone(),
        final_test_accuracy: run.test_accuracy,
        encrypted_infer_accuracy: None,
        training_wall_ms: run.wall_ms,
        refresh_count: 0,
        refresh_bytes: 0,
        oracle: None,
    };
    let (model_path, report_path, metrics_path) = out_paths(&a.out);
    write_atomic(&model_path, &model.to_bytes())?;
    write_metrics(&metrics_path, &run.metrics)?;
    report.write(&report_path)?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &RunReport) {
    println!(
        "mode {}: {} train / {} val / {} test rows, {} features, {} classes",
        r.mode, r.dataset.n_train, r.dataset.n_val, r.dataset.n_test, r.dataset.dim, r.dataset.classes
    );
    for e in &r.epochs {
        println!(
            "  epoch {:>3}  t {:>5}  val loss {:.4}  val acc {:.4}  refreshes {:>6}  {:>8} ms",
            e.epoch, e.t, e.val_loss, e.val_accuracy, e.refresh_count, e.wall_ms
        );
    }
    println!("test accuracy {:.4}", r.final_test_accuracy);
    if let Some(acc) = r.encrypted_infer_accuracy {
        println!("encrypted inference accuracy {acc:.4}");
    }
    println!(
        "training {:.1} s, {} refreshes, {:.1} MB refresh traffic",
        r.training_wall_ms as f64 / 1000.0,
        r.refresh_count,
        r.refresh_bytes as f64 / 1e6
    );
    if let Some(o) = &r.oracle {
        println!(
            "cleartext ({} softmax): test accuracy {:.4} in {} ms, max weight difference {:.2e}",
            o.softmax, o.test_accuracy, o.wall_ms, o.max_weight_divergence
        );
    }
}

pub fn report_cmd(a: &ReportArgs) -> Result<()> {
    let r = RunReport::read(&a.report)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r).map_err(|e| json_err(&a.report, e))?);
    } else {
        print_report(&r);
    }
    Ok(())
}
