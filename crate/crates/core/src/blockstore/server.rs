use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;

use log::{debug, warn};

use super::wire::{Frame, Opcode};
use super::{BlockStore, Ciphertext};
use crate::error::{Error, Result};

/// A backend shared between server sessions. Each download/upload holds the
/// lock for exactly one cell operation.
pub type SharedStore = Arc<Mutex<Box<dyn BlockStore + Send>>>;

/// TCP block server: one thread per session, one request/response pair at a
/// time per session.
pub struct BlockServer {
    listener: TcpListener,
    store: SharedStore,
}

impl BlockServer {
    pub fn bind(addr: impl ToSocketAddrs, store: Box<dyn BlockStore + Send>) -> Result<Self> {
        Ok(BlockServer {
            listener: TcpListener::bind(addr)?,
            store: Arc::new(Mutex::new(store)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn store(&self) -> SharedStore {
        Arc::clone(&self.store)
    }

    /// Accepts sessions until the listener fails.
    pub fn run(self) -> Result<()> {
        for conn in self.listener.incoming() {
            let stream = conn?;
            let store = Arc::clone(&self.store);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_tcp(stream, &store) {
                    warn!("session {peer:?} ended with error: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread and returns its address.
    pub fn spawn(self) -> Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || {
            if let Err(e) = self.run() {
                warn!("block server stopped: {e}");
            }
        });
        Ok(addr)
    }
}

fn serve_tcp(stream: TcpStream, store: &SharedStore) -> Result<()> {
    stream.set_nodelay(true)?;
    let write_half = stream.try_clone()?;
    handle_session(stream, write_half, store)
}

/// Serves one session until the peer closes the stream. Request-level errors
/// (bad address, wrong payload size, unknown opcode) are answered with an
/// ERROR frame; a truncated frame ends the session.
pub fn handle_session<R: Read, W: Write>(
    read_half: R,
    write_half: W,
    store: &SharedStore,
) -> Result<()> {
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(write_half);
    loop {
        let req = match Frame::read_from(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(Error::Frame(msg)) if msg.starts_with("unknown opcode") => {
                // Header was consumed but the payload length is untrusted;
                // report and drop the session.
                Frame::error(0, &msg).write_to(&mut writer)?;
                return Err(Error::Frame(msg));
            }
            Err(e) => return Err(e),
        };
        let resp = answer(&req, store);
        debug!("{:?}@{} -> {:?}", req.opcode, req.address, resp.opcode);
        resp.write_to(&mut writer)?;
    }
}

fn answer(req: &Frame, store: &SharedStore) -> Frame {
    let Some(addr) = req.address.checked_add(1) else {
        return Frame::error(req.address, "address out of range");
    };
    let mut guard = store.lock().unwrap_or_else(|p| p.into_inner());
    let result = match req.opcode {
        Opcode::Download => {
            if !req.payload.is_empty() {
                Err(Error::Frame("download request carries a payload".into()))
            } else {
                guard
                    .download(addr)
                    .map(|ct| Frame {
                        opcode: Opcode::Download,
                        address: req.address,
                        payload: ct.0,
                    })
            }
        }
        Opcode::Upload => guard
            .upload(addr, &Ciphertext(req.payload.clone()))
            .map(|()| Frame::upload(req.address, Vec::new())),
        Opcode::Error => Err(Error::Frame("ERROR is not a request opcode".into())),
    };
    result.unwrap_or_else(|e| Frame::error(req.address, &e.to_string()))
}
