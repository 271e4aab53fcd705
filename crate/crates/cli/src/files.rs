//! Key files, session files and output plumbing shared by the commands.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dpaccess::blockstore::CipherKey;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Client secrets. Kept apart from session state so state files can be
/// inspected or shared without exposing the key.
#[derive(Serialize, Deserialize)]
pub struct KeyFile {
    pub cipher_key: CipherKey,
}

impl KeyFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).with_context(|| format!("reading key file {}", path.display()))
    }

    /// Loads `path`, or generates a fresh key and writes it there.
    pub fn load_or_create(path: &Path) -> Result<Self> {
        if path.exists() {
            return Self::load(path);
        }
        let key = KeyFile {
            cipher_key: CipherKey::generate(),
        };
        write_json(path, &key)?;
        restrict_permissions(path)?;
        Ok(key)
    }
}

#[cfg(unix)]
fn restrict_permissions(path: &Path) -> Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
    Ok(())
}

#[cfg(not(unix))]
fn restrict_permissions(_: &Path) -> Result<()> {
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes through a temporary file and renames, so an interrupted write
/// never leaves a truncated state file behind.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

/// A file, or stdout when no path is given.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Reads a whole file, or stdin for `-`.
pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    if path == Path::new("-") {
        io::stdin().read_to_end(&mut buf)?;
    } else {
        buf = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    }
    Ok(buf)
}

/// A value given either inline as hex or as a file, zero-padded to `size`.
pub fn value_bytes(hex_value: Option<&str>, file: Option<&Path>, size: usize) -> Result<Vec<u8>> {
    let mut bytes = match (hex_value, file) {
        (Some(h), None) => hex::decode(h.trim()).context("value is not valid hex")?,
        (None, Some(p)) => read_input(p)?,
        _ => bail!("give exactly one of --value and --value-file"),
    };
    if bytes.len() > size {
        bail!("value is {} bytes, blocks hold {size}", bytes.len());
    }
    bytes.resize(size, 0);
    Ok(bytes)
}

/// Per-invocation stream seed: a fixed `--seed` is mixed with a counter that
/// advances between invocations so resumed sessions never replay randomness.
pub fn session_seed(seed: u64, counter: u64) -> u64 {
    seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
