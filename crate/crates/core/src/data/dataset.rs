//! The processed dataset file: magic "GDF1", little-endian u32 dimensions
//! (I, J, L, T), T x I x J x L u32 counts, then T x 6 f64 calendar features.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::events::EventGrid;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDF1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: EventGrid,
    /// One 6-vector of calendar features per time slot.
    pub calendar: Vec<[f64; 6]>,
}

impl Dataset {
    pub fn new(grid: EventGrid, calendar: Vec<[f64; 6]>) -> Result<Self> {
        if calendar.len() != grid.slots {
            return Err(Error::Data(format!(
                "calendar has {} rows for {} slots",
                calendar.len(),
                grid.slots
            )));
        }
        Ok(Dataset { grid, calendar })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        for dim in [
            self.grid.rows,
            self.grid.cols,
            self.grid.categories,
            self.grid.slots,
        ] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &c in self.grid.raw_counts() {
            w.write_all(&c.to_le_bytes())?;
        }
        for row in &self.calendar {
            for &v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Data(format!("truncated dataset header: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Data(format!(
                "bad dataset magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let [rows, cols, categories, slots] = dims;
        let n_counts = rows * cols * categories * slots;
        let mut counts = vec![0u32; n_counts];
        for c in &mut counts {
            *c = read_u32(&mut r)?;
        }
        let mut calendar = Vec::with_capacity(slots);
        for _ in 0..slots {
            let mut row = [0.0f64; 6];
            for v in &mut row {
                *v = read_f64(&mut r)?;
            }
            calendar.push(row);
        }
        let grid = EventGrid::from_counts(rows, cols, categories, slots, counts)?;
        Dataset::new(grid, calendar)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("truncated dataset: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("truncated dataset: {e}")))?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let mut grid = EventGrid::zeros(3, 2, 2, 4);
        grid.add_event(0, 1, 1, 0);
        grid.add_event(3, 2, 0, 1);
        grid.add_event(3, 2, 0, 1);
        let calendar: Vec<[f64; 6]> = (0..4)
            .map(|t| [t as f64 / 10.0, 0.0, 0.25, 0.5, 0.75, 1.0])
            .collect();
        let ds = Dataset::new(grid, calendar).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.bin");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = Dataset::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        std::fs::write(&path, b"GDF1\x02\x00\x00\x00").unwrap();
        let err = Dataset::load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
