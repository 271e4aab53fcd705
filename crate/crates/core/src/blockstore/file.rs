use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{check_addr, check_len, BlockStore, Ciphertext};
use crate::error::{param, Result};

/// A single preallocated file of fixed-size records.
///
/// Cell `addr` lives at byte offset `(addr - 1) * cell_len`. No journaling.
#[derive(Debug)]
pub struct FileStore {
    file: File,
    cells: u64,
    cell_len: usize,
}

impl FileStore {
    /// Creates (or truncates) `path` with `cells` zeroed records.
    pub fn create(path: impl AsRef<Path>, cells: u64, cell_len: usize) -> Result<Self> {
        if cell_len == 0 {
            return Err(param("cell length must be positive"));
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.set_len(cells * cell_len as u64)?;
        Ok(FileStore {
            file,
            cells,
            cell_len,
        })
    }

    /// Opens an existing backing file; the cell count is derived from its size.
    pub fn open(path: impl AsRef<Path>, cell_len: usize) -> Result<Self> {
        if cell_len == 0 {
            return Err(param("cell length must be positive"));
        }
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len();
        if len % cell_len as u64 != 0 {
            return Err(param(format!(
                "backing file size {len} is not a multiple of cell length {cell_len}"
            )));
        }
        Ok(FileStore {
            file,
            cells: len / cell_len as u64,
            cell_len,
        })
    }

    fn offset(&self, addr: u64) -> u64 {
        (addr - 1) * self.cell_len as u64
    }
}

impl BlockStore for FileStore {
    fn cells(&self) -> u64 {
        self.cells
    }

    fn cell_len(&self) -> usize {
        self.cell_len
    }

    fn download(&mut self, addr: u64) -> Result<Ciphertext> {
        check_addr(addr, self.cells)?;
        let mut buf = vec![0; self.cell_len];
        self.file.seek(SeekFrom::Start(self.offset(addr)))?;
        self.file.read_exact(&mut buf)?;
        Ok(Ciphertext(buf))
    }

    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()> {
        check_addr(addr, self.cells)?;
        check_len(ct.len(), self.cell_len)?;
        self.file.seek(SeekFrom::Start(self.offset(addr)))?;
        self.file.write_all(ct.as_bytes())?;
        Ok(())
    }
}
