//! Flat-file formats.
//!
//! Trees are stored as a fixed header plus depth-first node records
//! (depth u8, direction i8, duration f64, child count LEB128); that order
//! reconstructs the tree uniquely and lets the loader re-validate duration
//! additivity. Families and fine paths get compact binary layouts of their
//! own; covers and reports are small and travel as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::boxes::{FamilyBox, SelectedFamily};
use crate::error::{Error, Result};
use crate::fine_path::FinePath;
use crate::tree::{CrossingTree, DurationMode, Node};

const TREE_MAGIC: &[u8; 4] = b"BMCT";
const FAMILY_MAGIC: &[u8; 4] = b"BMSF";
const PATH_MAGIC: &[u8; 4] = b"BMFP";
const VERSION: u16 = 1;

fn write_u16(w: &mut impl Write, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_i64(w: &mut impl Write, v: i64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_varint(w: &mut impl Write, mut v: u32) -> Result<()> {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            w.write_all(&[byte])?;
            return Ok(());
        }
        w.write_all(&[byte | 0x80])?;
    }
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated file".into()))?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_exact::<2>(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_i64(r: &mut impl Read) -> Result<i64> {
    Ok(i64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_varint(r: &mut impl Read) -> Result<u32> {
    let mut v = 0u32;
    let mut shift = 0u32;
    loop {
        let byte = read_exact::<1>(r)?[0];
        v |= ((byte & 0x7f) as u32) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
        if shift > 28 {
            return Err(Error::Format("varint overflow".into()));
        }
    }
}

fn check_magic(r: &mut impl Read, expect: &[u8; 4]) -> Result<()> {
    let got = read_exact::<4>(r)?;
    if &got != expect {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            got, expect
        )));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

/// Tree header metadata carried by the file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeFileMeta {
    pub mode: Option<DurationMode>,
    pub seed: u64,
}

pub fn save_tree(path: &Path, tree: &CrossingTree, meta: &TreeFileMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TREE_MAGIC)?;
    write_u16(&mut w, VERSION)?;
    let mode = match meta.mode {
        None => 0u8,
        Some(DurationMode::Mean) => 1,
        Some(DurationMode::Sampled) => 2,
    };
    w.write_all(&[mode])?;
    write_u16(&mut w, tree.k as u16)?;
    write_u16(&mut w, tree.max_depth as u16)?;
    write_u64(&mut w, meta.seed)?;
    write_u64(&mut w, tree.len() as u64)?;
    for n in tree.nodes() {
        w.write_all(&[n.depth, n.direction as u8])?;
        write_f64(&mut w, n.duration)?;
        write_varint(&mut w, n.child_count)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tree(path: &Path) -> Result<(CrossingTree, TreeFileMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, TREE_MAGIC)?;
    let mode = match read_exact::<1>(&mut r)?[0] {
        0 => None,
        1 => Some(DurationMode::Mean),
        2 => Some(DurationMode::Sampled),
        m => return Err(Error::Format(format!("unknown duration mode {m}"))),
    };
    let k = read_u16(&mut r)? as u32;
    let max_depth = read_u16(&mut r)? as u32;
    let seed = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let mut nodes: Vec<Node> = Vec::with_capacity(count);
    for _ in 0..count {
        let head = read_exact::<2>(&mut r)?;
        let duration = read_f64(&mut r)?;
        let child_count = read_varint(&mut r)?;
        let direction = head[1] as i8;
        if direction != 1 && direction != -1 {
            return Err(Error::Format(format!("bad direction {direction}")));
        }
        nodes.push(Node {
            duration,
            subtree: 1,
            child_count,
            depth: head[0],
            direction,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after node records".into()));
    }
    // Recompute subtree sizes from the depth-first layout and verify shape.
    let mut consumed = 0usize;
    fn fill(nodes: &mut [Node], at: usize, consumed: &mut usize) -> Result<usize> {
        if at >= nodes.len() {
            return Err(Error::Format("node records end inside a subtree".into()));
        }
        *consumed += 1;
        let depth = nodes[at].depth;
        let cc = nodes[at].child_count as usize;
        let mut size = 1usize;
        for _ in 0..cc {
            let child_at = at + size;
            if child_at >= nodes.len() || nodes[child_at].depth != depth + 1 {
                return Err(Error::Format("child depth mismatch".into()));
            }
            size += fill(nodes, child_at, consumed)?;
        }
        nodes[at].subtree = size as u32;
        Ok(size)
    }
    let total = fill(&mut nodes, 0, &mut consumed)?;
    if total != count || consumed != count {
        return Err(Error::Format(format!(
            "node records describe {total} nodes, header says {count}"
        )));
    }
    let tree = CrossingTree::from_parts(k, max_depth, nodes);
    if mode.is_some() {
        tree.validate_durations(1e-9)?;
    }
    Ok((tree, TreeFileMeta { mode, seed }))
}

pub fn save_family(path: &Path, fam: &SelectedFamily) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FAMILY_MAGIC)?;
    write_u16(&mut w, VERSION)?;
    write_u16(&mut w, fam.k as u16)?;
    write_u16(&mut w, fam.rk as u16)?;
    write_f64(&mut w, fam.c)?;
    write_u16(&mut w, fam.sk as u16)?;
    write_u16(&mut w, fam.depth as u16)?;
    write_u64(&mut w, fam.boxes.len() as u64)?;
    for s in &fam.scale_start {
        write_u32(&mut w, *s)?;
    }
    for b in &fam.boxes {
        w.write_all(&[b.scale])?;
        write_i64(&mut w, b.level)?;
        write_f64(&mut w, b.x0)?;
        write_f64(&mut w, b.x1)?;
        write_u32(&mut w, b.parent)?;
        write_u32(&mut w, b.child_start)?;
        write_u32(&mut w, b.child_count)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_family(path: &Path) -> Result<SelectedFamily> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, FAMILY_MAGIC)?;
    let k = read_u16(&mut r)? as u32;
    let rk = read_u16(&mut r)? as u32;
    let c = read_f64(&mut r)?;
    let sk = read_u16(&mut r)? as u32;
    let depth = read_u16(&mut r)? as u32;
    let count = read_u64(&mut r)? as usize;
    let mut scale_start = Vec::with_capacity(depth as usize + 2);
    for _ in 0..=(depth + 1) {
        scale_start.push(read_u32(&mut r)?);
    }
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        let scale = read_exact::<1>(&mut r)?[0];
        let level = read_i64(&mut r)?;
        let x0 = read_f64(&mut r)?;
        let x1 = read_f64(&mut r)?;
        let parent = read_u32(&mut r)?;
        let child_start = read_u32(&mut r)?;
        let child_count = read_u32(&mut r)?;
        boxes.push(FamilyBox {
            scale,
            level,
            x0,
            x1,
            parent,
            child_start,
            child_count,
        });
    }
    let fam = SelectedFamily {
        k,
        rk,
        c,
        sk,
        depth,
        boxes,
        scale_start,
    };
    fam.validate()?;
    Ok(fam)
}

pub fn save_path(path: &Path, fine: &FinePath) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PATH_MAGIC)?;
    write_u16(&mut w, VERSION)?;
    write_f64(&mut w, fine.h)?;
    write_u64(&mut w, fine.values.len() as u64)?;
    for v in &fine.values {
        write_f64(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_path(path: &Path) -> Result<FinePath> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, PATH_MAGIC)?;
    let h = read_f64(&mut r)?;
    let n = read_u64(&mut r)? as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(read_f64(&mut r)?);
    }
    if h <= 0.0 || values.is_empty() {
        return Err(Error::Format("empty or malformed path file".into()));
    }
    Ok(FinePath { h, values })
}

/// JSON save/load for the small serde-backed types (covers, reports).
pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value).map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::{sample_family, GoodnessParams, Rational, DEFAULT_REJECT_CAP};
    use crate::rng::RngStream;
    use crate::tree::{assign_durations, build_crossing_tree, DEFAULT_NODE_CAP};

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("bmlab-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn tree_round_trip() {
        let rng = RngStream::new(7);
        let mut t = build_crossing_tree(4, 3, DEFAULT_NODE_CAP, &rng).unwrap();
        assign_durations(&mut t, DurationMode::Sampled, &rng);
        let meta = TreeFileMeta {
            mode: Some(DurationMode::Sampled),
            seed: 7,
        };
        let p = tmp("tree.bmct");
        save_tree(&p, &t, &meta).unwrap();
        let (t2, meta2) = load_tree(&p).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(t.len(), t2.len());
        for (a, b) in t.nodes().iter().zip(t2.nodes()) {
            assert_eq!(a.depth, b.depth);
            assert_eq!(a.direction, b.direction);
            assert_eq!(a.child_count, b.child_count);
            assert_eq!(a.subtree, b.subtree);
            assert_eq!(a.duration.to_bits(), b.duration.to_bits());
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn tree_file_size_audit() {
        let rng = RngStream::new(8);
        let mut t = build_crossing_tree(5, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        assign_durations(&mut t, DurationMode::Mean, &rng);
        let p = tmp("tree-size.bmct");
        save_tree(
            &p,
            &t,
            &TreeFileMeta {
                mode: Some(DurationMode::Mean),
                seed: 8,
            },
        )
        .unwrap();
        let size = std::fs::metadata(&p).unwrap().len();
        let header = 4 + 2 + 1 + 2 + 2 + 8 + 8;
        let n = t.len() as u64;
        assert!(size >= header + 11 * n, "size {size} too small for {n} nodes");
        assert!(size <= header + 13 * n, "size {size} too large for {n} nodes");
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn corrupted_tree_is_rejected_without_partial_object() {
        let rng = RngStream::new(9);
        let mut t = build_crossing_tree(3, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        assign_durations(&mut t, DurationMode::Mean, &rng);
        let p = tmp("tree-corrupt.bmct");
        save_tree(
            &p,
            &t,
            &TreeFileMeta {
                mode: Some(DurationMode::Mean),
                seed: 9,
            },
        )
        .unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // clobber the first node's child count (last byte of its record)
        let header = 4 + 2 + 1 + 2 + 2 + 8 + 8;
        let idx = header + 2 + 8;
        bytes[idx] = bytes[idx].wrapping_add(3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_tree(&p).is_err());
        // magic corruption
        let mut bytes2 = std::fs::read(&p).unwrap();
        bytes2[0] = b'X';
        std::fs::write(&p, &bytes2).unwrap();
        assert!(matches!(load_tree(&p), Err(Error::Format(_))));
        // truncation
        let good = {
            save_tree(
                &p,
                &t,
                &TreeFileMeta {
                    mode: Some(DurationMode::Mean),
                    seed: 9,
                },
            )
            .unwrap();
            std::fs::read(&p).unwrap()
        };
        std::fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(load_tree(&p).is_err());
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn family_round_trip() {
        let params = GoodnessParams::new(5, Rational::parse("1/5").unwrap(), 0.8).unwrap();
        let fam = sample_family(
            &params,
            2,
            DurationMode::Mean,
            &RngStream::new(11),
            DEFAULT_REJECT_CAP,
        )
        .unwrap();
        let p = tmp("family.bmsf");
        save_family(&p, &fam).unwrap();
        let fam2 = load_family(&p).unwrap();
        assert_eq!(fam.boxes.len(), fam2.boxes.len());
        for (a, b) in fam.boxes.iter().zip(&fam2.boxes) {
            assert_eq!(a.level, b.level);
            assert_eq!(a.x0.to_bits(), b.x0.to_bits());
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn path_round_trip() {
        let mut rng = RngStream::new(12);
        let path = crate::fine_path::sample_fine_path(0.5, 1e-3, &mut rng).unwrap();
        let p = tmp("path.bmfp");
        save_path(&p, &path).unwrap();
        let path2 = load_path(&p).unwrap();
        assert_eq!(path.values.len(), path2.values.len());
        assert_eq!(path.h, path2.h);
        for (a, b) in path.values.iter().zip(&path2.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn cover_json_round_trip() {
        let cover = crate::level_set::CoverFamily {
            k: 4,
            delta: 0.01,
            intervals: vec![crate::level_set::CoverInterval {
                a: 0.25,
                b: 0.375,
                closed_left: false,
                closed_right: false,
            }],
            sum_sqrt: 0.35355339059327373,
            max_len: 0.125,
        };
        let p = tmp("cover.json");
        save_json(&p, &cover).unwrap();
        let c2: crate::level_set::CoverFamily = load_json(&p).unwrap();
        assert_eq!(c2.intervals.len(), 1);
        assert_eq!(c2.intervals[0].a, 0.25);
        std::fs::remove_file(&p).ok();
    }
}
