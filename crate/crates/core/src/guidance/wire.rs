//! Length-prefixed binary framing for remote guidance.
//!
//! Every message is `"TGRW" | u16 version | u8 kind | u32 length | payload`,
//! little-endian. Payloads:
//!
//! - handshake: u32 capability bits, u32 max height, u32 max width, string name
//! - request: string prompt, f32 t, u64 seed, 4 × 12 f32 poses, 4 rendered
//!   then 4 original images, u32 count + (string key, string value) pairs
//! - response: 4 images
//! - error: u16 code, UTF-8 message (rest of payload)
//!
//! Strings are u32 byte length + UTF-8. Images are u32 H, u32 W, then
//! `3 · H · W` f32 in planar channel order.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use super::{GuidanceError, GuidanceRequest, GuidanceResponse, Image, VIEW_COUNT};

pub const MAGIC: &[u8; 4] = b"TGRW";
pub const PROTOCOL_VERSION: u16 = 1;
/// Frames longer than this are rejected as malformed.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Handshake = 0,
    Request = 1,
    Response = 2,
    Error = 3,
}

impl Kind {
    fn from_u8(k: u8) -> Option<Kind> {
        match k {
            0 => Some(Kind::Handshake),
            1 => Some(Kind::Request),
            2 => Some(Kind::Response),
            3 => Some(Kind::Error),
            _ => None,
        }
    }
}

/// Error codes carried in error frames.
pub mod code {
    pub const VERSION_MISMATCH: u16 = 1;
    pub const CAPABILITY_MISMATCH: u16 = 2;
    pub const OVERSIZED: u16 = 3;
    pub const MALFORMED: u16 = 4;
    pub const INTERNAL: u16 = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub version: u16,
    pub kind: Kind,
    pub payload: Vec<u8>,
}

pub fn write_message(w: &mut impl Write, version: u16, kind: Kind, payload: &[u8]) -> io::Result<()> {
    let mut header = [0u8; 11];
    header[..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&version.to_le_bytes());
    header[6] = kind as u8;
    header[7..11].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a header.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, GuidanceError> {
    let mut header = [0u8; 11];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(GuidanceError::Malformed("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if &header[..4] != MAGIC {
        return Err(GuidanceError::Malformed("bad frame magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    let kind = Kind::from_u8(header[6]).ok_or_else(|| GuidanceError::Malformed(format!("unknown kind {}", header[6])))?;
    let len = u32::from_le_bytes([header[7], header[8], header[9], header[10]]);
    if len > MAX_PAYLOAD {
        return Err(GuidanceError::Malformed(format!("frame length {len} exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => GuidanceError::Malformed("stream ended inside a frame payload".into()),
        _ => GuidanceError::Transport(e),
    })?;
    Ok(Some(Message { version, kind, payload }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handshake {
    pub capabilities: u32,
    pub max_height: u32,
    pub max_width: u32,
    pub name: String,
}

#[derive(Default)]
struct Encoder(Vec<u8>);

impl Encoder {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn image(&mut self, img: &Image) {
        self.u32(img.height as u32);
        self.u32(img.width as u32);
        self.0.reserve(img.data.len() * 4);
        for &v in &img.data {
            self.f32(v);
        }
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GuidanceError> {
        if self.buf.len() < n {
            return Err(GuidanceError::Malformed("payload truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u16(&mut self) -> Result<u16, GuidanceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, GuidanceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, GuidanceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, GuidanceError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, GuidanceError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| GuidanceError::Malformed("string is not UTF-8".into()))
    }
    fn image(&mut self) -> Result<Image, GuidanceError> {
        let h = self.u32()? as usize;
        let w = self.u32()? as usize;
        let n = h.checked_mul(w).and_then(|n| n.checked_mul(3)).ok_or_else(|| GuidanceError::Malformed("image too large".into()))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| GuidanceError::Malformed("image too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Image { height: h, width: w, data })
    }
    fn finish(self) -> Result<(), GuidanceError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(GuidanceError::Malformed(format!("{} trailing payload bytes", self.buf.len())))
        }
    }
}

pub fn encode_handshake(h: &Handshake) -> Vec<u8> {
    let mut e = Encoder::default();
    e.u32(h.capabilities);
    e.u32(h.max_height);
    e.u32(h.max_width);
    e.string(&h.name);
    e.0
}

pub fn decode_handshake(payload: &[u8]) -> Result<Handshake, GuidanceError> {
    let mut d = Decoder { buf: payload };
    let h = Handshake { capabilities: d.u32()?, max_height: d.u32()?, max_width: d.u32()?, name: d.string()? };
    d.finish()?;
    Ok(h)
}

pub fn encode_request(req: &GuidanceRequest) -> Vec<u8> {
    let mut e = Encoder::default();
    e.string(&req.prompt);
    e.f32(req.t);
    e.u64(req.seed);
    for pose in &req.poses {
        for &v in pose {
            e.f32(v);
        }
    }
    for img in req.rendered_views.iter().chain(&req.original_views) {
        e.image(img);
    }
    e.u32(req.config.len() as u32);
    for (k, v) in &req.config {
        e.string(k);
        e.string(v);
    }
    e.0
}

pub fn decode_request(payload: &[u8]) -> Result<GuidanceRequest, GuidanceError> {
    let mut d = Decoder { buf: payload };
    let prompt = d.string()?;
    let t = d.f32()?;
    let seed = d.u64()?;
    let mut poses = Vec::with_capacity(VIEW_COUNT);
    for _ in 0..VIEW_COUNT {
        let mut p = [0.0f32; 12];
        for v in &mut p {
            *v = d.f32()?;
        }
        poses.push(p);
    }
    let rendered_views = (0..VIEW_COUNT).map(|_| d.image()).collect::<Result<Vec<_>, _>>()?;
    let original_views = (0..VIEW_COUNT).map(|_| d.image()).collect::<Result<Vec<_>, _>>()?;
    let count = d.u32()?;
    let mut config = BTreeMap::new();
    for _ in 0..count {
        let k = d.string()?;
        let v = d.string()?;
        config.insert(k, v);
    }
    d.finish()?;
    Ok(GuidanceRequest { rendered_views, original_views, poses, t, seed, prompt, config })
}

pub fn encode_response(resp: &GuidanceResponse) -> Vec<u8> {
    let mut e = Encoder::default();
    for img in &resp.residuals {
        e.image(img);
    }
    e.0
}

pub fn decode_response(payload: &[u8]) -> Result<GuidanceResponse, GuidanceError> {
    let mut d = Decoder { buf: payload };
    let residuals = (0..VIEW_COUNT).map(|_| d.image()).collect::<Result<Vec<_>, _>>()?;
    d.finish()?;
    Ok(GuidanceResponse { residuals })
}

pub fn encode_error(code: u16, message: &str) -> Vec<u8> {
    let mut e = Encoder::default();
    e.u16(code);
    e.0.extend_from_slice(message.as_bytes());
    e.0
}

pub fn decode_error(payload: &[u8]) -> Result<(u16, String), GuidanceError> {
    let mut d = Decoder { buf: payload };
    let code = d.u16()?;
    Ok((code, String::from_utf8_lossy(d.buf).into_owned()))
}
