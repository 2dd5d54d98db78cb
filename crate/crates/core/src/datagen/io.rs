//! Corpus directory layout:
//!
//! * `skeletons.txt`: `<id> <pre-order tokens>` per line;
//! * `data.bin`: little-endian records behind an 8-byte magic, a `u32`
//!   version and a `u64` record count. Each record is the skeleton id
//!   (`u32`), the realization seed (`u64`), the 50×7 `f32` matrix
//!   row-major, the ground-truth length (`u8`) and its token ids (`u8` each);
//! * `split.json`: record indices of the train, validation and test subsets.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Corpus, CorpusSplit, DataError, Skeleton, TabularDataset, N_COLS};
use crate::expr::TokenSequence;

pub const DATA_MAGIC: &[u8; 8] = b"SRFORGE1";
pub const DATA_VERSION: u32 = 1;
/// Rows of every persisted dataset.
pub const PERSISTED_ROWS: usize = 50;

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;

    let mut text = String::new();
    for s in &corpus.skeletons {
        text.push_str(&format!("{} {}\n", s.id, s.tokens));
    }
    fs::write(dir.join("skeletons.txt"), text)?;

    let mut out = BufWriter::new(fs::File::create(dir.join("data.bin"))?);
    out.write_all(DATA_MAGIC)?;
    out.write_all(&DATA_VERSION.to_le_bytes())?;
    out.write_all(&(corpus.datasets.len() as u64).to_le_bytes())?;
    for d in &corpus.datasets {
        if d.n_rows() != PERSISTED_ROWS {
            return Err(DataError::Format(format!(
                "only {PERSISTED_ROWS}-row datasets can be persisted, got {}",
                d.n_rows()
            )));
        }
        let ids = d.ground_truth.ids();
        let len = u8::try_from(ids.len())
            .map_err(|_| DataError::Format("ground truth longer than 255 tokens".into()))?;
        out.write_all(&d.skeleton_id.to_le_bytes())?;
        out.write_all(&d.seed.to_le_bytes())?;
        for v in d.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[len])?;
        out.write_all(&ids)?;
    }
    out.flush()?;

    let split = serde_json::to_string(&corpus.split).map_err(|e| DataError::Format(e.to_string()))?;
    fs::write(dir.join("split.json"), split)?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus, DataError> {
    let mut skeletons = Vec::new();
    for (lineno, line) in fs::read_to_string(dir.join("skeletons.txt"))?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| DataError::Format(format!("skeletons.txt line {}: {m}", lineno + 1));
        let (id, tokens) = line.trim().split_once(' ').ok_or_else(|| bad("missing tokens".into()))?;
        let id: u32 = id.parse().map_err(|_| bad(format!("bad id `{id}`")))?;
        let tokens: TokenSequence = tokens.parse().map_err(|e| bad(format!("{e}")))?;
        let tree = tokens.to_tree().map_err(|e| bad(format!("{e}")))?;
        skeletons.push(Skeleton { id, tree, tokens });
    }

    let mut input = BufReader::new(fs::File::open(dir.join("data.bin"))?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DATA_MAGIC {
        return Err(DataError::Version {
            found: 0,
            expected: DATA_VERSION,
        });
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != DATA_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: DATA_VERSION,
        });
    }
    let count = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let mut datasets = Vec::with_capacity(count.min(1 << 20));
    let mut matrix = vec![0u8; PERSISTED_ROWS * N_COLS * 4];
    for _ in 0..count {
        let skeleton_id = u32::from_le_bytes(read_array(&mut input)?);
        let seed = u64::from_le_bytes(read_array(&mut input)?);
        input.read_exact(&mut matrix)?;
        let values = matrix
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let [len] = read_array::<1>(&mut input)?;
        let mut ids = vec![0u8; len as usize];
        input.read_exact(&mut ids)?;
        let truth = TokenSequence::from_ids(&ids).map_err(|e| DataError::Format(e.to_string()))?;
        datasets.push(TabularDataset::from_values(skeleton_id, seed, truth, values)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DataError::Format(format!("{} trailing bytes in data.bin", rest.len())));
    }

    let split: CorpusSplit = serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)
        .map_err(|e| DataError::Format(format!("split.json: {e}")))?;
    if split.len() != datasets.len()
        || split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .any(|&i| i >= datasets.len())
    {
        return Err(DataError::Format("split.json does not match data.bin".into()));
    }
    Ok(Corpus {
        skeletons,
        datasets,
        split,
    })
}

fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N], DataError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::super::{build_corpus, build_skeleton_bank, GenerationConfig};
    use super::*;

    fn small_corpus() -> Corpus {
        let config = GenerationConfig {
            n_raw_samples: 300,
            n_realizations: 2,
            seed: 3,
            ..GenerationConfig::default()
        };
        let bank = build_skeleton_bank(&config).unwrap();
        build_corpus(&bank.skeletons, &config).unwrap().0
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_corpus();
        write_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn corrupted_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&small_corpus(), dir.path()).unwrap();
        let path = dir.path().join("data.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(DataError::Version { .. })));
    }

    #[test]
    fn empty_corpus_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Corpus {
            skeletons: vec![],
            datasets: vec![],
            split: CorpusSplit::default(),
        };
        write_corpus(&empty, dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join("data.bin")).unwrap().len(), 20);
        assert_eq!(read_corpus(dir.path()).unwrap(), empty);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&small_corpus(), dir.path()).unwrap();
        let path = dir.path().join("data.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(DataError::Io(_))));
    }
}
