//! Binary dataset/pool files and CSV import.
//!
//! Dataset (`ADID`, little-endian): magic, version `u16`, dim `u32`,
//! class count `u32`, then per class: class id `u32`, sample count `u32`,
//! `count × dim` values as `f64`.
//!
//! Pool (`ADIP`, little-endian): magic, version `u16`, dataset count `u32`,
//! then per dataset: name length `u32`, UTF-8 name, one embedded `ADID`
//! block, and one provenance record per class (`u8` flag, source dataset
//! `u32`, source class `u32`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ClassSamples, Dataset, DatasetPool, SourceClass};
use crate::error::{Error, Result};

const DATASET_MAGIC: &[u8; 4] = b"ADID";
const POOL_MAGIC: &[u8; 4] = b"ADIP";
const VERSION: u16 = 1;

pub fn write_dataset(w: &mut impl Write, dataset: &Dataset) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.dim() as u32).to_le_bytes())?;
    w.write_all(&(dataset.num_classes() as u32).to_le_bytes())?;
    for class in dataset.classes() {
        w.write_all(&class.id().to_le_bytes())?;
        w.write_all(&(class.len() as u32).to_le_bytes())?;
        for v in class.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read, name: &str) -> Result<Dataset> {
    let mut r = Cursor::new(r);
    read_dataset_block(&mut r, name)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

/// Loads a dataset file; the dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_dataset(&mut BufReader::new(File::open(path)?), &name)
}

pub fn write_pool(w: &mut impl Write, pool: &DatasetPool) -> Result<()> {
    w.write_all(POOL_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(pool.datasets().len() as u32).to_le_bytes())?;
    for ds in pool.datasets() {
        let name = ds.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        write_dataset(w, ds)?;
        for class in ds.classes() {
            match class.source() {
                Some(s) => {
                    w.write_all(&[1])?;
                    w.write_all(&(s.dataset as u32).to_le_bytes())?;
                    w.write_all(&s.class.to_le_bytes())?;
                }
                None => w.write_all(&[0; 9])?,
            }
        }
    }
    Ok(())
}

pub fn read_pool(r: &mut impl Read) -> Result<DatasetPool> {
    let mut r = Cursor::new(r);
    r.expect_magic(POOL_MAGIC)?;
    r.expect_version()?;
    let count = r.u32()? as usize;
    let mut datasets = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32()? as usize;
        let bytes = r.bytes(len)?;
        let name = String::from_utf8(bytes).map_err(|_| Error::MalformedFile {
            offset: at,
            reason: "dataset name is not UTF-8".into(),
        })?;
        let ds = read_dataset_block(&mut r, &name)?;
        let mut classes = Vec::with_capacity(ds.num_classes());
        for class in ds.classes() {
            let flag = r.u8()?;
            let dataset = r.u32()? as usize;
            let source_class = r.u32()?;
            let mut class = class.clone();
            if flag == 1 {
                class = class.with_source(SourceClass {
                    dataset,
                    class: source_class,
                });
            }
            classes.push(class);
        }
        datasets.push(Dataset::new(name, ds.dim(), classes)?);
    }
    DatasetPool::new(datasets)
}

pub fn save_pool(path: impl AsRef<Path>, pool: &DatasetPool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pool(&mut w, pool)?;
    w.flush()?;
    Ok(())
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<DatasetPool> {
    read_pool(&mut BufReader::new(File::open(path)?))
}

/// Imports a CSV with a header row, numeric feature columns and a final
/// integer label column. Classes are ordered by label.
pub fn import_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let width = reader.headers().map_err(csv_error)?.len();
    if width < 2 {
        return Err(Error::MalformedFile {
            offset: 0,
            reason: "need at least one feature column and a label column".into(),
        });
    }
    let dim = width - 1;
    let mut by_label: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        let bad = |reason: String| Error::MalformedFile { offset, reason };
        if record.len() != width {
            return Err(bad(format!("expected {width} columns, found {}", record.len())));
        }
        let label: u32 = record[dim]
            .parse()
            .map_err(|_| bad(format!("label `{}` is not a non-negative integer", &record[dim])))?;
        let row = by_label.entry(label).or_default();
        for field in record.iter().take(dim) {
            row.push(
                field
                    .parse::<f64>()
                    .map_err(|_| bad(format!("feature `{field}` is not numeric")))?,
            );
        }
    }
    let classes = by_label
        .into_iter()
        .map(|(label, data)| ClassSamples::new(label, dim, data))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, dim, classes)
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedFile {
            offset,
            reason: format!("{other:?}"),
        },
    }
}

fn read_dataset_block<R: Read>(r: &mut Cursor<R>, name: &str) -> Result<Dataset> {
    r.expect_magic(DATASET_MAGIC)?;
    r.expect_version()?;
    let dim_at = r.pos;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::MalformedFile {
            offset: dim_at,
            reason: "feature dimension is zero".into(),
        });
    }
    let count = r.u32()? as usize;
    let mut classes = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let id = r.u32()?;
        let n_at = r.pos;
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(Error::MalformedFile {
                offset: n_at,
                reason: format!("class {id} has no samples"),
            });
        }
        let mut data = Vec::with_capacity((n * dim).min(1 << 24));
        for _ in 0..n * dim {
            data.push(r.f64()?);
        }
        classes.push(ClassSamples::new(id, dim, data)?);
    }
    Dataset::new(name, dim, classes).map_err(|e| Error::MalformedFile {
        offset: r.pos,
        reason: e.to_string(),
    })
}

/// Byte-counting reader that reports truncation with its offset.
pub(crate) struct Cursor<R> {
    inner: R,
    pub(crate) pos: u64,
}

impl<R: Read> Cursor<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, pos: 0 }
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::MalformedFile {
                        offset: self.pos,
                        reason: format!("unexpected end of file reading {} bytes", buf.len()),
                    })
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.pos += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        let mut b = [0; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let mut b = [0; 2];
        self.fill(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let mut b = [0; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let mut b = [0; 4];
        self.fill(&mut b)?;
        if &b != magic {
            return Err(Error::MalformedFile {
                offset: at,
                reason: format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self) -> Result<()> {
        let at = self.pos;
        let v = self.u16()?;
        if v != VERSION {
            return Err(Error::MalformedFile {
                offset: at,
                reason: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }
}
