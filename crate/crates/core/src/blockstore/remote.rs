use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::wire::{Frame, Opcode};
use super::{check_addr, check_len, BlockStore, Ciphertext};
use crate::error::{Error, Result};

/// Client side of the block server protocol.
///
/// Geometry (`cells`, `cell_len`) is a deployment parameter known to both
/// ends; requests are validated locally before they are sent so errors match
/// the in-memory backend exactly.
pub struct RemoteStore<S: Read + Write = TcpStream> {
    reader: BufReader<S>,
    writer: BufWriter<S>,
    cells: u64,
    cell_len: usize,
}

impl RemoteStore<TcpStream> {
    pub fn connect(addr: impl ToSocketAddrs, cells: u64, cell_len: usize) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let write_half = stream.try_clone()?;
        Ok(RemoteStore {
            reader: BufReader::new(stream),
            writer: BufWriter::new(write_half),
            cells,
            cell_len,
        })
    }
}

impl<S: Read + Write> RemoteStore<S> {
    /// Runs the protocol over two halves of an arbitrary duplex stream.
    pub fn from_halves(read_half: S, write_half: S, cells: u64, cell_len: usize) -> Self {
        RemoteStore {
            reader: BufReader::new(read_half),
            writer: BufWriter::new(write_half),
            cells,
            cell_len,
        }
    }

    fn round_trip(&mut self, req: Frame) -> Result<Frame> {
        req.write_to(&mut self.writer)?;
        let resp = Frame::read_from(&mut self.reader)?
            .ok_or_else(|| Error::Frame("server closed the connection".into()))?;
        if resp.opcode == Opcode::Error {
            return Err(Error::Remote(String::from_utf8_lossy(&resp.payload).into_owned()));
        }
        if resp.opcode != req.opcode || resp.address != req.address {
            return Err(Error::Frame(format!(
                "response {:?}@{} does not match request {:?}@{}",
                resp.opcode, resp.address, req.opcode, req.address
            )));
        }
        Ok(resp)
    }
}

impl<S: Read + Write> BlockStore for RemoteStore<S> {
    fn cells(&self) -> u64 {
        self.cells
    }

    fn cell_len(&self) -> usize {
        self.cell_len
    }

    fn download(&mut self, addr: u64) -> Result<Ciphertext> {
        check_addr(addr, self.cells)?;
        let resp = self.round_trip(Frame::download(addr - 1))?;
        check_len(resp.payload.len(), self.cell_len)?;
        Ok(Ciphertext(resp.payload))
    }

    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()> {
        check_addr(addr, self.cells)?;
        check_len(ct.len(), self.cell_len)?;
        let resp = self.round_trip(Frame::upload(addr - 1, ct.0.clone()))?;
        if !resp.payload.is_empty() {
            return Err(Error::Frame("upload acknowledgement carries a payload".into()));
        }
        Ok(())
    }
}
