//! Framed protocol messages.
//!
//! Frame: u32 length of everything that follows, u16 type tag, u64 session
//! id, 32-byte parameter digest, then the body. Nested blobs (keys,
//! matrices) are u64 length-prefixed.

use crate::ckks::serial::{eval_keys_from_bytes, eval_keys_to_bytes, public_key_from_bytes, public_key_to_bytes};
use crate::ckks::{CkksContext, EvalKeySet, PublicKey};
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_bytes, matrix_to_bytes, EncMatrix, RefreshPurpose};
use crate::wire::{put_u32, put_u64, Reader};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Tag {
    Control = 1,
    EncDatasetUpload = 2,
    EncLogits = 3,
    RefreshRequest = 4,
    RefreshResponse = 5,
    FinalModel = 6,
    InferRequest = 7,
    InferResponse = 8,
}

impl Tag {
    fn from_u16(v: u16) -> Option<Self> {
        use Tag::*;
        [
            Control,
            EncDatasetUpload,
            EncLogits,
            RefreshRequest,
            RefreshResponse,
            FinalModel,
            InferRequest,
            InferResponse,
        ]
        .into_iter()
        .find(|t| *t as u16 == v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    /// Training configuration as JSON.
    Config(String),
    Ack,
    Close,
    /// The sender gave up; the text says why.
    Abort(String),
}

/// One encrypted mini-batch; `real_rows` leading rows carry data.
#[derive(Clone, Debug, PartialEq)]
pub struct EncBatch {
    pub x: EncMatrix,
    pub y: EncMatrix,
    pub real_rows: usize,
}

#[derive(Clone, Debug)]
pub struct DatasetUpload {
    pub public_key: PublicKey,
    pub eval_keys: EvalKeySet,
    pub batches: Vec<EncBatch>,
    pub val_x: EncMatrix,
}

#[derive(Clone, Debug)]
pub enum Message {
    Control(Control),
    EncDatasetUpload(Box<DatasetUpload>),
    EncLogits { epoch: u32, t: u64, logits: EncMatrix },
    RefreshRequest { purpose: RefreshPurpose, matrices: Vec<EncMatrix> },
    RefreshResponse { matrices: Vec<EncMatrix> },
    FinalModel(EncMatrix),
    InferRequest(EncMatrix),
    InferResponse(EncMatrix),
}

impl Message {
    pub fn tag(&self) -> Tag {
        match self {
            Message::Control(_) => Tag::Control,
            Message::EncDatasetUpload(_) => Tag::EncDatasetUpload,
            Message::EncLogits { .. } => Tag::EncLogits,
            Message::RefreshRequest { .. } => Tag::RefreshRequest,
            Message::RefreshResponse { .. } => Tag::RefreshResponse,
            Message::FinalModel(_) => Tag::FinalModel,
            Message::InferRequest(_) => Tag::InferRequest,
            Message::InferResponse(_) => Tag::InferResponse,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Control(Control::Config(_)) => "Config",
            Message::Control(Control::Ack) => "Ack",
            Message::Control(Control::Close) => "Close",
            Message::Control(Control::Abort(_)) => "Abort",
            Message::EncDatasetUpload(_) => "EncDatasetUpload",
            Message::EncLogits { .. } => "EncLogits",
            Message::RefreshRequest { .. } => "RefreshRequest",
            Message::RefreshResponse { .. } => "RefreshResponse",
            Message::FinalModel(_) => "FinalModel",
            Message::InferRequest(_) => "InferRequest",
            Message::InferResponse(_) => "InferResponse",
        }
    }
}

fn put_blob(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn blob<'a>(r: &mut Reader<'a>) -> Result<&'a [u8]> {
    let at = r.offset();
    let len = r.u64()?;
    if len > r.remaining() as u64 {
        return Err(Error::format(at, format!("blob of {len} bytes exceeds frame")));
    }
    r.take(len as usize)
}

fn text(r: &mut Reader<'_>) -> Result<String> {
    let at = r.offset();
    let len = r.count(1)?;
    String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(at, "text is not UTF-8"))
}

/// Serializes a message into one frame.
pub fn encode(ctx: &CkksContext, session: u64, msg: &Message) -> Vec<u8> {
    let mut body = vec![0u8; 6];
    put_u64(&mut body, session);
    body.extend_from_slice(&ctx.digest());
    let mat = |out: &mut Vec<u8>, m: &EncMatrix| put_blob(out, &matrix_to_bytes(ctx, m));
    match msg {
        Message::Control(c) => match c {
            Control::Config(json) => {
                body.push(1);
                put_text(&mut body, json);
            }
            Control::Ack => body.push(2),
            Control::Close => body.push(3),
            Control::Abort(why) => {
                body.push(4);
                put_text(&mut body, why);
            }
        },
        Message::EncDatasetUpload(up) => {
            put_blob(&mut body, &public_key_to_bytes(ctx, &up.public_key));
            put_blob(&mut body, &eval_keys_to_bytes(ctx, &up.eval_keys));
            put_u32(&mut body, up.batches.len() as u32);
            for b in &up.batches {
                put_u32(&mut body, b.real_rows as u32);
                mat(&mut body, &b.x);
                mat(&mut body, &b.y);
            }
            mat(&mut body, &up.val_x);
        }
        Message::EncLogits { epoch, t, logits } => {
            put_u32(&mut body, *epoch);
            put_u64(&mut body, *t);
            mat(&mut body, logits);
        }
        Message::RefreshRequest { purpose, matrices } => {
            body.push(*purpose as u8);
            put_u32(&mut body, matrices.len() as u32);
            matrices.iter().for_each(|m| mat(&mut body, m));
        }
        Message::RefreshResponse { matrices } => {
            put_u32(&mut body, matrices.len() as u32);
            matrices.iter().for_each(|m| mat(&mut body, m));
        }
        Message::FinalModel(m) | Message::InferRequest(m) | Message::InferResponse(m) => mat(&mut body, m),
    }
    let len = u32::try_from(body.len() - 4).expect("frame under 4 GiB");
    body[..4].copy_from_slice(&len.to_le_bytes());
    body[4..6].copy_from_slice(&(msg.tag() as u16).to_le_bytes());
    body
}

/// Frame header fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub tag: Tag,
    pub session: u64,
    pub digest: [u8; 32],
}

/// Header and body offset, checking the length prefix.
pub fn parse_header(frame: &[u8]) -> Result<(Header, usize)> {
    let mut r = Reader::new(frame);
    let len = r.u32()? as usize;
    if len != r.remaining() {
        return Err(Error::format(0, format!("frame length {len}, {} bytes follow", r.remaining())));
    }
    let at = r.offset();
    let raw = r.u16()?;
    let tag = Tag::from_u16(raw).ok_or_else(|| Error::format(at, format!("unknown message tag {raw}")))?;
    let session = r.u64()?;
    let digest = r.array::<32>()?;
    Ok((Header { tag, session, digest }, r.offset()))
}

/// Reads the configuration carried by a `Config` frame without a context.
pub fn peek_config(frame: &[u8]) -> Result<(Header, String)> {
    let (h, off) = parse_header(frame)?;
    let mut r = Reader::new(&frame[off..]);
    if h.tag != Tag::Control || r.u8()? != 1 {
        return Err(Error::Protocol("expected a Config message".into()));
    }
    let json = text(&mut r)?;
    Ok((h, json))
}

fn offset_err(base: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Format { offset, msg } => Error::Format { offset: base + offset, msg },
        other => other,
    }
}

/// Parses a frame, checking its session and parameter digest.
pub fn decode(ctx: &CkksContext, session: u64, frame: &[u8]) -> Result<Message> {
    let (h, off) = parse_header(frame)?;
    if h.digest != ctx.digest() {
        return Err(Error::DigestMismatch);
    }
    if h.session != session {
        return Err(Error::Protocol(format!(
            "message for session {:016x}, expected {session:016x}",
            h.session
        )));
    }
    let mut r = Reader::new(&frame[off..]);
    let msg = decode_body(ctx, h.tag, &mut r).map_err(offset_err(off))?;
    r.finish().map_err(offset_err(off))?;
    Ok(msg)
}

fn matrix(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<EncMatrix> {
    let at = r.offset();
    let b = blob(r)?;
    matrix_from_bytes(ctx, b).map_err(offset_err(at + 8))
}

fn matrices(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<Vec<EncMatrix>> {
    let n = r.count(8)?;
    (0..n).map(|_| matrix(ctx, r)).collect()
}

fn decode_body(ctx: &CkksContext, tag: Tag, r: &mut Reader<'_>) -> Result<Message> {
    Ok(match tag {
        Tag::Control => {
            let at = r.offset();
            Message::Control(match r.u8()? {
                1 => Control::Config(text(r)?),
                2 => Control::Ack,
                3 => Control::Close,
                4 => Control::Abort(text(r)?),
                k => return Err(Error::format(at, format!("unknown control kind {k}"))),
            })
        }
        Tag::EncDatasetUpload => {
            let at = r.offset();
            let public_key = public_key_from_bytes(ctx, blob(r)?).map_err(offset_err(at + 8))?;
            let at = r.offset();
            let eval_keys = eval_keys_from_bytes(ctx, blob(r)?).map_err(offset_err(at + 8))?;
            let n = r.count(4)?;
            let mut batches = Vec::with_capacity(n);
            for _ in 0..n {
                let real_rows = r.u32()? as usize;
                let x = matrix(ctx, r)?;
                let y = matrix(ctx, r)?;
                batches.push(EncBatch { x, y, real_rows });
            }
            let val_x = matrix(ctx, r)?;
            Message::EncDatasetUpload(Box::new(DatasetUpload { public_key, eval_keys, batches, val_x }))
        }
        Tag::EncLogits => Message::EncLogits {
            epoch: r.u32()?,
            t: r.u64()?,
            logits: matrix(ctx, r)?,
        },
        Tag::RefreshRequest => {
            let at = r.offset();
            let p = r.u8()?;
            let purpose =
                RefreshPurpose::from_u8(p).ok_or_else(|| Error::format(at, format!("unknown refresh purpose {p}")))?;
            Message::RefreshRequest { purpose, matrices: matrices(ctx, r)? }
        }
        Tag::RefreshResponse => Message::RefreshResponse { matrices: matrices(ctx, r)? },
        Tag::FinalModel => Message::FinalModel(matrix(ctx, r)?),
        Tag::InferRequest => Message::InferRequest(matrix(ctx, r)?),
        Tag::InferResponse => Message::InferResponse(matrix(ctx, r)?),
    })
}
