//! Client side of the model bridge.
//!
//! Each message is a JSON header line terminated by `\n`, an 8-byte
//! little-endian payload length, then the payload as little-endian `f32`.
//! The connection is strictly request/response with one request in flight.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{MevgError, Result};
use crate::latent::{FrameLatent, FrameShape, LatentDims, VideoLatent};
use crate::predictor::{Condition, NoisePredictor};

pub const DTYPE: &str = "f32le";
const MAX_HEADER_BYTES: u64 = 1 << 20;
const MAX_PAYLOAD_BYTES: u64 = 1 << 34;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Hello,
    Predict,
    EncodeImage,
    Decode,
    ClipText,
    ClipImage,
    Bye,
}

/// What a server reports in its hello response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Clip latent dims `[F, c, h, w]` the model expects.
    pub latent_dims: [usize; 4],
    #[serde(default)]
    pub ops: Vec<Op>,
    #[serde(default)]
    pub model: Option<String>,
}

impl Capabilities {
    pub fn clip_dims(&self) -> LatentDims {
        let [f, c, h, w] = self.latent_dims;
        LatentDims::new(f, c, h, w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub op: Op,
    pub request_id: u64,
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Capabilities>,
}

fn default_dtype() -> String {
    DTYPE.to_string()
}

impl Header {
    pub fn new(op: Op, request_id: u64) -> Self {
        Self {
            op,
            request_id,
            dims: Vec::new(),
            dtype: default_dtype(),
            t: None,
            prompt: None,
            score: None,
            error: None,
            capabilities: None,
        }
    }

    /// Number of `f32` values the dims describe; no dims means no payload.
    pub fn element_count(&self) -> Result<usize> {
        if self.dims.is_empty() {
            return Ok(0);
        }
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| MevgError::Protocol(format!("dims {:?} overflow", self.dims)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub header: Header,
    pub payload: Vec<f32>,
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    let count = msg.header.element_count()?;
    if count != msg.payload.len() {
        return Err(MevgError::Protocol(format!(
            "dims {:?} describe {count} values but payload has {}",
            msg.header.dims,
            msg.payload.len()
        )));
    }
    let mut buf =
        serde_json::to_vec(&msg.header).map_err(|e| MevgError::Protocol(e.to_string()))?;
    buf.push(b'\n');
    buf.extend_from_slice(&((4 * count) as u64).to_le_bytes());
    buf.reserve(4 * count);
    for v in &msg.payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: BufRead>(r: &mut R) -> Result<Message> {
    let mut line = Vec::new();
    r.by_ref()
        .take(MAX_HEADER_BYTES)
        .read_until(b'\n', &mut line)?;
    if line.is_empty() {
        return Err(MevgError::Protocol("connection closed".into()));
    }
    if line.last() != Some(&b'\n') {
        return Err(MevgError::Protocol("header line not terminated".into()));
    }
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| MevgError::Protocol(format!("bad header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(MevgError::Protocol(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    let count = header.element_count()?;
    if len != 4 * count as u64 || len > MAX_PAYLOAD_BYTES {
        return Err(MevgError::Protocol(format!(
            "payload of {len} bytes does not match dims {:?}",
            header.dims
        )));
    }
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes)?;
    let payload = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Message { header, payload })
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Blocking bridge client; also a [`NoisePredictor`].
pub struct BridgeClient {
    conn: Mutex<Connection>,
    next_id: AtomicU64,
}

impl BridgeClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self> {
        let mut last = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => return Self::from_stream(stream, timeout),
                Err(e) => last = Some(e),
            }
        }
        Err(last
            .map(MevgError::Io)
            .unwrap_or_else(|| MevgError::Protocol("address resolved to nothing".into())))
    }

    pub fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            conn: Mutex::new(Connection {
                reader: BufReader::new(stream),
                writer,
            }),
            next_id: AtomicU64::new(1),
        })
    }

    fn call(&self, mut header: Header, payload: Vec<f32>) -> Result<Message> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        header.request_id = id;
        let op = header.op;
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| MevgError::Protocol("connection lock poisoned".into()))?;
        write_message(&mut conn.writer, &Message { header, payload })?;
        let resp = read_message(&mut conn.reader)?;
        if resp.header.request_id != id {
            return Err(MevgError::Protocol(format!(
                "response id {} does not match request {id}",
                resp.header.request_id
            )));
        }
        if let Some(message) = resp.header.error {
            return Err(MevgError::Remote {
                request_id: id,
                message,
            });
        }
        if resp.header.op != op {
            return Err(MevgError::Protocol(format!(
                "expected {op:?} response, got {:?}",
                resp.header.op
            )));
        }
        Ok(resp)
    }

    pub fn hello(&self) -> Result<Capabilities> {
        let resp = self.call(Header::new(Op::Hello, 0), Vec::new())?;
        resp.header
            .capabilities
            .ok_or_else(|| MevgError::Protocol("hello response without capabilities".into()))
    }

    pub fn predict_remote(
        &self,
        x_t: &VideoLatent,
        timestep: usize,
        prompt: &str,
    ) -> Result<VideoLatent> {
        let dims = x_t.dims();
        let mut h = Header::new(Op::Predict, 0);
        h.dims = dims.as_array().to_vec();
        h.t = Some(timestep);
        h.prompt = Some(prompt.to_string());
        let resp = self.call(h, x_t.as_slice().to_vec())?;
        if resp.header.dims != dims.as_array() {
            return Err(MevgError::Protocol(format!(
                "predict returned dims {:?}, expected {:?}",
                resp.header.dims,
                dims.as_array()
            )));
        }
        VideoLatent::new(dims, resp.payload)
    }

    /// Encodes an RGB image (`3 × height × width`, values in [0, 1]).
    pub fn encode_image(&self, rgb: &[f32], height: usize, width: usize) -> Result<FrameLatent> {
        let mut h = Header::new(Op::EncodeImage, 0);
        h.dims = vec![3, height, width];
        let resp = self.call(h, rgb.to_vec())?;
        match resp.header.dims.as_slice() {
            &[c, lh, lw] => FrameLatent::new(FrameShape::new(c, lh, lw), resp.payload),
            other => Err(MevgError::Protocol(format!(
                "encode_image returned dims {other:?}"
            ))),
        }
    }

    /// Decodes a clip to RGB frames; returns `([F, 3, H, W], values in [0, 1])`.
    pub fn decode(&self, latent: &VideoLatent) -> Result<([usize; 4], Vec<f32>)> {
        let mut h = Header::new(Op::Decode, 0);
        h.dims = latent.dims().as_array().to_vec();
        let resp = self.call(h, latent.as_slice().to_vec())?;
        match resp.header.dims.as_slice() {
            &[f, c, hh, ww] => Ok(([f, c, hh, ww], resp.payload)),
            other => Err(MevgError::Protocol(format!(
                "decode returned dims {other:?}"
            ))),
        }
    }

    pub fn clip_text(&self, frames: &[f32], dims: [usize; 4], prompt: &str) -> Result<f64> {
        let mut h = Header::new(Op::ClipText, 0);
        h.dims = dims.to_vec();
        h.prompt = Some(prompt.to_string());
        self.score(h, frames)
    }

    pub fn clip_image(&self, frames: &[f32], dims: [usize; 4]) -> Result<f64> {
        let mut h = Header::new(Op::ClipImage, 0);
        h.dims = dims.to_vec();
        self.score(h, frames)
    }

    fn score(&self, header: Header, frames: &[f32]) -> Result<f64> {
        let op = header.op;
        let resp = self.call(header, frames.to_vec())?;
        resp.header
            .score
            .ok_or_else(|| MevgError::Protocol(format!("{op:?} response without score")))
    }

    pub fn bye(&self) -> Result<()> {
        self.call(Header::new(Op::Bye, 0), Vec::new()).map(|_| ())
    }
}

impl NoisePredictor for BridgeClient {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent> {
        let prompt = cond.prompt().unwrap_or(cond.id());
        self.predict_remote(x_t, timestep, prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn wire_layout() {
        let mut h = Header::new(Op::Predict, 7);
        h.dims = vec![1, 1, 1, 2];
        h.t = Some(19);
        let mut buf = Vec::new();
        write_message(
            &mut buf,
            &Message {
                header: h,
                payload: vec![1.0, 2.0],
            },
        )
        .unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let json: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(json["op"], "predict");
        assert_eq!(json["dtype"], "f32le");
        assert_eq!(json["t"], 19);
        assert_eq!(&buf[nl + 1..nl + 9], &8u64.to_le_bytes());
        assert_eq!(&buf[nl + 9..nl + 13], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), nl + 17);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut h = Header::new(Op::Predict, 1);
        h.dims = vec![2];
        assert!(write_message(
            &mut Vec::new(),
            &Message {
                header: h.clone(),
                payload: vec![1.0]
            }
        )
        .is_err());

        let mut buf = serde_json::to_vec(&h).unwrap();
        buf.push(b'\n');
        buf.extend_from_slice(&4u64.to_le_bytes());
        buf.extend_from_slice(&[0; 4]);
        assert!(matches!(
            read_message(&mut Cursor::new(buf)),
            Err(MevgError::Protocol(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn codec_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..5),
            bits in proptest::collection::vec(any::<u32>(), 256),
        ) {
            let n: usize = dims.iter().product();
            let payload: Vec<f32> = bits.iter().cycle().take(n).map(|&b| f32::from_bits(b)).collect();
            let mut h = Header::new(Op::Predict, 3);
            h.dims = dims;
            let msg = Message { header: h, payload };
            let mut buf = Vec::new();
            write_message(&mut buf, &msg).unwrap();
            let back = read_message(&mut Cursor::new(buf)).unwrap();
            prop_assert_eq!(&back.header, &msg.header);
            prop_assert!(back.payload.iter().zip(&msg.payload).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
