//! Frame transports and session transcripts.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use super::message::{parse_header, Tag};
use crate::io::write_atomic;
use crate::wire::{put_u32, Reader};

/// One encoded message, shared between the transport and the transcript.
pub type Frame = Arc<Vec<u8>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Client = 1,
    Cloud = 2,
}

impl Role {
    pub fn peer(self) -> Self {
        match self {
            Role::Client => Role::Cloud,
            Role::Cloud => Role::Client,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Cloud => "cloud",
        }
    }
}

pub trait Transport {
    fn send(&mut self, frame: Frame) -> Result<()>;
    fn recv(&mut self) -> Result<Frame>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, frame: Frame) -> Result<()> {
        (**self).send(frame)
    }

    fn recv(&mut self) -> Result<Frame> {
        (**self).recv()
    }
}

const TRANSCRIPT_MAGIC: &[u8; 4] = b"BTTR";

/// Every frame of a session in send order, tagged with its sender.
#[derive(Clone, Debug, Default)]
pub struct Transcript {
    pub entries: Vec<(Role, Frame)>,
}

impl Transcript {
    pub fn frames_from(&self, role: Role) -> impl Iterator<Item = &Frame> {
        self.entries.iter().filter(move |(r, _)| *r == role).map(|(_, f)| f)
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|(_, f)| f.len() as u64).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = TRANSCRIPT_MAGIC.to_vec();
        put_u32(&mut out, self.entries.len() as u32);
        for (role, f) in &self.entries {
            out.push(*role as u8);
            put_u32(&mut out, f.len() as u32);
            out.extend_from_slice(f);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(TRANSCRIPT_MAGIC)?;
        let n = r.count(5)?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let role = match r.u8()? {
                1 => Role::Client,
                2 => Role::Cloud,
                b => return Err(Error::format(at, format!("unknown role {b}"))),
            };
            let len = r.count(1)?;
            entries.push((role, Arc::new(r.take(len)?.to_vec())));
        }
        r.finish()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Reads the message files of a file-transport session directory. The
    /// sender of each frame follows from its message type; an `Abort`
    /// comes from the side that did not send the frame before it.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut entries: Vec<(Role, Frame)> = Vec::new();
        for seq in 0.. {
            let path = message_path(dir, seq);
            if !path.exists() {
                break;
            }
            let frame = Arc::new(std::fs::read(&path)?);
            let prev = entries.last().map(|e| e.0);
            let role = sender_of(&frame, prev).map_err(|e| match e {
                Error::Format { offset, msg } => Error::Format { offset, msg: format!("{}: {msg}", path.display()) },
                other => other,
            })?;
            entries.push((role, frame));
        }
        Ok(Self { entries })
    }
}

fn sender_of(frame: &[u8], prev: Option<Role>) -> Result<Role> {
    let (h, off) = parse_header(frame)?;
    Ok(match h.tag {
        Tag::Control => match frame.get(off) {
            Some(4) => prev.map_or(Role::Client, Role::peer),
            Some(_) => Role::Client,
            None => return Err(Error::format(off, "missing control kind")),
        },
        Tag::EncDatasetUpload | Tag::RefreshResponse | Tag::InferRequest => Role::Client,
        Tag::EncLogits | Tag::RefreshRequest | Tag::FinalModel | Tag::InferResponse => Role::Cloud,
    })
}

/// Transcript shared by both ends of a session.
pub type SharedTranscript = Arc<Mutex<Transcript>>;

/// One end of an in-process channel pair.
pub struct ChannelTransport {
    role: Role,
    tx: Sender<Frame>,
    rx: Receiver<Frame>,
    transcript: Option<SharedTranscript>,
    timeout: Option<Duration>,
}

/// Connected client and cloud ends. Sends are recorded in `transcript`.
pub fn channel_pair(transcript: Option<SharedTranscript>) -> (ChannelTransport, ChannelTransport) {
    let (to_cloud, cloud_rx) = channel();
    let (to_client, client_rx) = channel();
    let end = |role, tx, rx| ChannelTransport { role, tx, rx, transcript: transcript.clone(), timeout: None };
    (end(Role::Client, to_cloud, client_rx), end(Role::Cloud, to_client, cloud_rx))
}

impl ChannelTransport {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, frame: Frame) -> Result<()> {
        if let Some(t) = &self.transcript {
            t.lock().expect("transcript lock").entries.push((self.role, frame.clone()));
        }
        self.tx
            .send(frame)
            .map_err(|_| Error::Protocol(format!("{} peer hung up", self.role.peer().name())))
    }

    fn recv(&mut self) -> Result<Frame> {
        let hung_up = || Error::Protocol(format!("{} peer hung up", self.role.peer().name()));
        match self.timeout {
            None => self.rx.recv().map_err(|_| hung_up()),
            Some(d) => self.rx.recv_timeout(d).map_err(|e| match e {
                RecvTimeoutError::Timeout => Error::Protocol(format!("no message within {d:?}")),
                RecvTimeoutError::Disconnected => hung_up(),
            }),
        }
    }
}

fn message_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("msg-{seq:06}.bin"))
}

/// Messages as numbered files in a session directory. Both ends keep their
/// own sequence counter; the fixed message order keeps them in step.
pub struct FileTransport {
    dir: PathBuf,
    seq: u64,
    poll: Duration,
    timeout: Duration,
}

impl FileTransport {
    pub fn new(dir: impl Into<PathBuf>, start_seq: u64) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, seq: start_seq, poll: Duration::from_millis(20), timeout: Duration::from_secs(24 * 3600) })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

impl Transport for FileTransport {
    fn send(&mut self, frame: Frame) -> Result<()> {
        let path = message_path(&self.dir, self.seq);
        if path.exists() {
            return Err(Error::Protocol(format!("{} already exists", path.display())));
        }
        write_atomic(&path, &frame)?;
        self.seq += 1;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame> {
        let want = message_path(&self.dir, self.seq);
        let start = Instant::now();
        while !want.exists() {
            if start.elapsed() > self.timeout {
                return Err(Error::Protocol(format!("no {} within {:?}", want.display(), self.timeout)));
            }
            std::thread::sleep(self.poll);
        }
        let frame = std::fs::read(&want)?;
        self.seq += 1;
        Ok(Arc::new(frame))
    }
}
