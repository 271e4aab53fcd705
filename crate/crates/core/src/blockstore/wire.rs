//! Framed binary protocol spoken between [`super::RemoteStore`] and
//! [`super::BlockServer`].
//!
//! ```text
//! frame = opcode (1) ‖ address (8, big-endian, 0-based) ‖ length (4, big-endian) ‖ payload
//! ```
//!
//! | opcode | request                        | response                          |
//! |--------|--------------------------------|-----------------------------------|
//! | `0x01` | DOWNLOAD, empty payload        | DOWNLOAD, payload = cell contents |
//! | `0x02` | UPLOAD, payload = ciphertext   | UPLOAD, empty payload             |
//! | `0x7F` | n/a                            | ERROR, payload = UTF-8 message    |
//!
//! Responses echo the request address. The scheme layer uses 1-based
//! addresses; the conversion happens only here, at the boundary.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 13;

/// Upper bound on accepted payloads, guarding against garbage length fields.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Download = 0x01,
    Upload = 0x02,
    Error = 0x7F,
}

impl TryFrom<u8> for Opcode {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            0x01 => Ok(Opcode::Download),
            0x02 => Ok(Opcode::Upload),
            0x7F => Ok(Opcode::Error),
            other => Err(Error::Frame(format!("unknown opcode {other:#04x}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    /// 0-based wire address.
    pub address: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn download(address: u64) -> Self {
        Frame {
            opcode: Opcode::Download,
            address,
            payload: Vec::new(),
        }
    }

    pub fn upload(address: u64, payload: Vec<u8>) -> Self {
        Frame {
            opcode: Opcode::Upload,
            address,
            payload,
        }
    }

    pub fn error(address: u64, msg: &str) -> Self {
        Frame {
            opcode: Opcode::Error,
            address,
            payload: msg.as_bytes().to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.push(self.opcode as u8);
        out.extend_from_slice(&self.address.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream before any header
    /// byte.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Frame>> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(Error::Frame("truncated frame header".into())),
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Self::decode_header(&header).and_then(|(opcode, address, len)| {
            let mut payload = vec![0; len as usize];
            r.read_exact(&mut payload).map_err(|e| {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    Error::Frame("truncated frame payload".into())
                } else {
                    e.into()
                }
            })?;
            Ok(Some(Frame {
                opcode,
                address,
                payload,
            }))
        })
    }

    /// Parses a complete frame from a byte slice, rejecting trailing bytes.
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Frame("truncated frame header".into()));
        }
        let (opcode, address, len) = Self::decode_header(bytes[..HEADER_LEN].try_into().unwrap())?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len as usize {
            return Err(Error::Frame(format!(
                "length field {len} but {} payload bytes",
                body.len()
            )));
        }
        Ok(Frame {
            opcode,
            address,
            payload: body.to_vec(),
        })
    }

    fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(Opcode, u64, u32)> {
        let opcode = Opcode::try_from(h[0])?;
        let address = u64::from_be_bytes(h[1..9].try_into().unwrap());
        let len = u32::from_be_bytes(h[9..13].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(Error::Frame(format!("payload length {len} exceeds limit")));
        }
        Ok((opcode, address, len))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout_is_big_endian() {
        let f = Frame::upload(0x0102_0304_0506_0708, vec![0xAA, 0xBB]);
        assert_eq!(
            f.encode(),
            vec![0x02, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 2, 0xAA, 0xBB]
        );
        assert_eq!(
            Frame::download(5).encode(),
            vec![0x01, 0, 0, 0, 0, 0, 0, 0, 5, 0, 0, 0, 0]
        );
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(
            Frame::decode(&[0x05, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]),
            Err(Error::Frame(_))
        ));
        assert!(matches!(
            Frame::decode(&[0x01, 0, 0]),
            Err(Error::Frame(_))
        ));
        assert!(matches!(
            Frame::decode(&[0x02, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 3, 1]),
            Err(Error::Frame(_))
        ));
        let mut huge = Frame::download(0).encode();
        huge[9..13].copy_from_slice(&(MAX_PAYLOAD + 1).to_be_bytes());
        assert!(matches!(Frame::decode(&huge), Err(Error::Frame(_))));
    }

    #[test]
    fn stream_reader_distinguishes_eof_from_truncation() {
        let mut empty: &[u8] = &[];
        assert!(Frame::read_from(&mut empty).unwrap().is_none());
        let mut partial: &[u8] = &[0x01, 0, 0];
        assert!(matches!(Frame::read_from(&mut partial), Err(Error::Frame(_))));
        let bytes = Frame::upload(9, vec![1, 2, 3]).encode();
        let mut short: &[u8] = &bytes[..bytes.len() - 1];
        assert!(matches!(Frame::read_from(&mut short), Err(Error::Frame(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(op in prop::sample::select(vec![Opcode::Download, Opcode::Upload, Opcode::Error]),
                                    address in any::<u64>(),
                                    payload in prop::collection::vec(any::<u8>(), 0..300)) {
            let f = Frame { opcode: op, address, payload };
            let bytes = f.encode();
            prop_assert_eq!(bytes.len(), HEADER_LEN + f.payload.len());
            prop_assert_eq!(Frame::decode(&bytes).unwrap(), f.clone());
            let mut r: &[u8] = &bytes;
            prop_assert_eq!(Frame::read_from(&mut r).unwrap(), Some(f));
        }
    }
}
