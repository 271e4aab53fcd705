use super::{check_addr, check_len, BlockStore, Ciphertext};
use crate::error::Result;

/// In-process cell array; the reference backend.
#[derive(Clone, Debug)]
pub struct MemoryStore {
    data: Vec<u8>,
    cells: u64,
    cell_len: usize,
}

impl MemoryStore {
    /// `cells` zero-filled cells of `cell_len` bytes.
    pub fn new(cells: u64, cell_len: usize) -> Self {
        MemoryStore {
            data: vec![0; cells as usize * cell_len],
            cells,
            cell_len,
        }
    }

    fn range(&self, addr: u64) -> std::ops::Range<usize> {
        let start = (addr - 1) as usize * self.cell_len;
        start..start + self.cell_len
    }
}

impl BlockStore for MemoryStore {
    fn cells(&self) -> u64 {
        self.cells
    }

    fn cell_len(&self) -> usize {
        self.cell_len
    }

    fn download(&mut self, addr: u64) -> Result<Ciphertext> {
        check_addr(addr, self.cells)?;
        Ok(Ciphertext(self.data[self.range(addr)].to_vec()))
    }

    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()> {
        check_addr(addr, self.cells)?;
        check_len(ct.len(), self.cell_len)?;
        let r = self.range(addr);
        self.data[r].copy_from_slice(ct.as_bytes());
        Ok(())
    }
}
