//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::{Arc, Mutex};

use dpaccess::blockstore::{BlockServer, BlockStore, Ciphertext, MemoryStore, RemoteStore};
use dpaccess::rng::stream;
use rand::Rng;

pub const GOLDEN: &str = include_str!("../golden/wire_capture.txt");

pub fn spawn_server(cells: u64, cell_len: usize) -> SocketAddr {
    BlockServer::bind("127.0.0.1:0", Box::new(MemoryStore::new(cells, cell_len)))
        .unwrap()
        .spawn()
        .unwrap()
}

/// Requests and replies of the golden capture, in order.
pub fn golden_exchanges() -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut out = Vec::new();
    let mut pending = None;
    for line in GOLDEN.lines().map(str::trim) {
        let Some((dir, rest)) = line.split_once(' ') else {
            continue;
        };
        let bytes = || hex::decode(rest.replace(' ', "")).unwrap();
        match dir {
            ">" => pending = Some(bytes()),
            "<" => out.push((pending.take().expect("reply without request"), bytes())),
            _ => {}
        }
    }
    out
}

/// Runs the same random download/upload script (including out-of-range
/// addresses) against `a` and `b`, then compares every cell. Returns the
/// first disagreement.
pub fn differential(
    a: &mut dyn BlockStore,
    b: &mut dyn BlockStore,
    steps: usize,
    seed: u64,
) -> Result<(), String> {
    let (cells, cell_len) = (a.cells(), a.cell_len());
    let mut rng = stream(seed, 0);
    for step in 0..steps {
        let addr = rng.gen_range(0..=cells + 1);
        let (ra, rb) = if rng.gen_bool(0.5) {
            let mut bytes = vec![0u8; cell_len];
            rng.fill(&mut bytes[..]);
            let ct = Ciphertext(bytes);
            (
                a.upload(addr, &ct).map(|()| None).map_err(|e| e.to_string()),
                b.upload(addr, &ct).map(|()| None).map_err(|e| e.to_string()),
            )
        } else {
            (
                a.download(addr).map(Some).map_err(|e| e.to_string()),
                b.download(addr).map(Some).map_err(|e| e.to_string()),
            )
        };
        if ra != rb {
            return Err(format!("step {step} at address {addr}: {ra:?} vs {rb:?}"));
        }
    }
    for addr in 1..=cells {
        let (x, y) = (a.download(addr).unwrap(), b.download(addr).unwrap());
        if x != y {
            return Err(format!("final contents differ at {addr}"));
        }
    }
    Ok(())
}

/// Stream half that records every byte passing through it.
pub struct Tap {
    inner: TcpStream,
    log: Arc<Mutex<Vec<u8>>>,
}

impl Read for Tap {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.log.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl Write for Tap {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.log.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub struct Recording {
    pub store: RemoteStore<Tap>,
    pub sent: Arc<Mutex<Vec<u8>>>,
    pub received: Arc<Mutex<Vec<u8>>>,
}

/// A remote store whose traffic is recorded in both directions.
pub fn recording_client(addr: SocketAddr, cells: u64, cell_len: usize) -> Recording {
    let sock = TcpStream::connect(addr).unwrap();
    let (sent, received) = (Arc::default(), Arc::default());
    let read_half = Tap { inner: sock.try_clone().unwrap(), log: Arc::clone(&received) };
    let write_half = Tap { inner: sock, log: Arc::clone(&sent) };
    Recording {
        store: RemoteStore::from_halves(read_half, write_half, cells, cell_len),
        sent,
        received,
    }
}

/// Replays the golden session through the real client against a fresh
/// 4-cell server and compares the recorded bytes with the capture.
pub fn replay_golden_session() -> Result<(), String> {
    let addr = spawn_server(4, 4);
    // The client believes in a fifth cell so the server's range check fires.
    let mut rec = recording_client(addr, 5, 4);
    let ct = Ciphertext(vec![0xde, 0xad, 0xbe, 0xef]);
    rec.store.upload(1, &ct).map_err(|e| e.to_string())?;
    let got = rec.store.download(1).map_err(|e| e.to_string())?;
    if got != ct {
        return Err(format!("read back {got:?}"));
    }
    rec.store.download(4).map_err(|e| e.to_string())?;
    match rec.store.download(5) {
        Err(dpaccess::Error::Remote(msg)) if msg == "address 5 out of range 1..=4" => {}
        other => return Err(format!("expected a remote range error, got {other:?}")),
    }
    let ex = golden_exchanges();
    let want_sent: Vec<u8> = ex.iter().flat_map(|(q, _)| q.clone()).collect();
    let want_received: Vec<u8> = ex.iter().flat_map(|(_, r)| r.clone()).collect();
    let sent = rec.sent.lock().unwrap().clone();
    let received = rec.received.lock().unwrap().clone();
    if sent != want_sent {
        return Err(format!("client sent {}, capture has {}", hex::encode(sent), hex::encode(want_sent)));
    }
    if received != want_received {
        return Err(format!(
            "server replied {}, capture has {}",
            hex::encode(received),
            hex::encode(want_received)
        ));
    }
    Ok(())
}

/// Sends the captured requests over a raw socket to a fresh 4-cell server
/// and checks each reply byte for byte.
pub fn server_replies_match_golden() -> Result<(), String> {
    let mut sock = TcpStream::connect(spawn_server(4, 4)).map_err(|e| e.to_string())?;
    for (i, (req, want)) in golden_exchanges().into_iter().enumerate() {
        sock.write_all(&req).map_err(|e| e.to_string())?;
        let mut got = vec![0; want.len()];
        sock.read_exact(&mut got).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("exchange {i}: got {}, want {}", hex::encode(got), hex::encode(want)));
        }
    }
    Ok(())
}
