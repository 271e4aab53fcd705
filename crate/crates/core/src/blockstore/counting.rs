use super::{BlockStore, Ciphertext};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Download,
    Upload,
}

/// One server-visible operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub kind: AccessKind,
    pub addr: u64,
}

/// Wraps a backend and counts (optionally logs) every successful access.
#[derive(Debug)]
pub struct CountingStore<S> {
    inner: S,
    downloads: u64,
    uploads: u64,
    log: Option<Vec<Access>>,
}

impl<S: BlockStore> CountingStore<S> {
    pub fn new(inner: S) -> Self {
        CountingStore {
            inner,
            downloads: 0,
            uploads: 0,
            log: None,
        }
    }

    /// Also record the address sequence.
    pub fn with_log(inner: S) -> Self {
        CountingStore {
            log: Some(Vec::new()),
            ..Self::new(inner)
        }
    }

    pub fn downloads(&self) -> u64 {
        self.downloads
    }

    pub fn uploads(&self) -> u64 {
        self.uploads
    }

    pub fn touches(&self) -> u64 {
        self.downloads + self.uploads
    }

    pub fn reset(&mut self) {
        self.downloads = 0;
        self.uploads = 0;
        if let Some(log) = &mut self.log {
            log.clear();
        }
    }

    pub fn take_log(&mut self) -> Vec<Access> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut S {
        &mut self.inner
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: BlockStore> BlockStore for CountingStore<S> {
    fn cells(&self) -> u64 {
        self.inner.cells()
    }

    fn cell_len(&self) -> usize {
        self.inner.cell_len()
    }

    fn download(&mut self, addr: u64) -> Result<Ciphertext> {
        let ct = self.inner.download(addr)?;
        self.downloads += 1;
        if let Some(log) = &mut self.log {
            log.push(Access {
                kind: AccessKind::Download,
                addr,
            });
        }
        Ok(ct)
    }

    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()> {
        self.inner.upload(addr, ct)?;
        self.uploads += 1;
        if let Some(log) = &mut self.log {
            log.push(Access {
                kind: AccessKind::Upload,
                addr,
            });
        }
        Ok(())
    }
}
