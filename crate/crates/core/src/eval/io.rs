//! Corpus layout:
//!
//! ```text
//! <root>/manifest.txt              key=value corpus description
//! <root>/splits/{train,val,test}.txt  one tracklet name per line
//! <root>/tracklets/<name>/manifest.txt
//! <root>/tracklets/<name>/frame_NNNN.bin
//! ```
//!
//! A frame file is `u32 index`, seven `f64` box values, `u32 count`, then
//! `count` little-endian `f32` xyz triples.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EvalError, Frame, Tracklet, TrackletMeta};
use crate::geom::{Box3D, Point3};

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, EvalError> {
    let mut map = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| EvalError::Format(format!("bad manifest line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, EvalError> {
    map.get(key)
        .ok_or_else(|| EvalError::Format(format!("missing {key}")))?
        .parse()
        .map_err(|_| EvalError::Format(format!("invalid {key}")))
}

fn write_frame<W: Write>(mut w: W, index: u32, frame: &Frame) -> Result<(), EvalError> {
    w.write_all(&index.to_le_bytes())?;
    for v in frame.gt.to_array() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(frame.points.len() as u32).to_le_bytes())?;
    for p in &frame.points {
        for v in p.to_array() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_frame<R: Read>(mut r: R, expect_index: u32) -> Result<Frame, EvalError> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let index = u32::from_le_bytes(b4);
    if index != expect_index {
        return Err(EvalError::Format(format!("frame index {index}, expected {expect_index}")));
    }
    let mut gt = [0.0; 7];
    for v in &mut gt {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut raw = vec![0u8; count.checked_mul(12).ok_or_else(|| EvalError::Format("point count".into()))?];
    r.read_exact(&mut raw)?;
    let points = raw
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
            Point3::new(f(0), f(4), f(8))
        })
        .collect();
    Ok(Frame { points, gt: Box3D::from_array(gt)? })
}

pub fn write_tracklet(dir: &Path, tracklet: &Tracklet) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let m = tracklet.meta();
    let manifest = format!(
        "name={}\ncategory={}\ndensity={}\nclutter={}\nseed={}\nframes={}\n",
        m.name,
        m.category,
        m.density,
        m.clutter,
        m.seed,
        tracklet.len()
    );
    fs::write(dir.join("manifest.txt"), manifest)?;
    for (i, frame) in tracklet.frames().iter().enumerate() {
        let f = fs::File::create(dir.join(format!("frame_{i:04}.bin")))?;
        write_frame(BufWriter::new(f), i as u32, frame)?;
    }
    Ok(())
}

pub fn read_tracklet(dir: &Path) -> Result<Tracklet, EvalError> {
    let map = parse_kv(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    let meta = TrackletMeta {
        name: field(&map, "name")?,
        category: field(&map, "category")?,
        density: field(&map, "density")?,
        clutter: field(&map, "clutter")?,
        seed: field(&map, "seed")?,
    };
    let n: usize = field(&map, "frames")?;
    let frames = (0..n)
        .map(|i| {
            let f = fs::File::open(dir.join(format!("frame_{i:04}.bin")))?;
            read_frame(BufReader::new(f), i as u32)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Tracklet::new(meta, frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub count: usize,
    pub frames: usize,
    pub mix: String,
    pub categories: String,
}

impl CorpusManifest {
    pub fn to_text(&self) -> String {
        format!(
            "format=ptt-corpus-1\nseed={}\ncount={}\nframes={}\nmix={}\ncategories={}\n",
            self.seed, self.count, self.frames, self.mix, self.categories
        )
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let map = parse_kv(text)?;
        Ok(Self {
            seed: field(&map, "seed")?,
            count: field(&map, "count")?,
            frames: field(&map, "frames")?,
            mix: field(&map, "mix")?,
            categories: field(&map, "categories")?,
        })
    }
}

/// Tracklet names per partition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// 70 / 10 / 20 by position.
    pub fn by_position(names: &[String]) -> Self {
        let n = names.len();
        let n_train = n * 7 / 10;
        let n_val = n / 10;
        Self {
            train: names[..n_train].to_vec(),
            val: names[n_train..n_train + n_val].to_vec(),
            test: names[n_train + n_val..].to_vec(),
        }
    }

    pub fn get(&self, part: &str) -> Option<&[String]> {
        match part {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub split: Split,
    pub tracklets: Vec<Tracklet>,
}

impl Corpus {
    /// Tracklets of one partition, in split-file order.
    pub fn part(&self, part: &str) -> Result<Vec<&Tracklet>, EvalError> {
        let names = self.split.get(part).ok_or_else(|| EvalError::Format(format!("unknown split {part:?}")))?;
        names
            .iter()
            .map(|n| {
                self.tracklets
                    .iter()
                    .find(|t| &t.meta().name == n)
                    .ok_or_else(|| EvalError::Format(format!("split names unknown tracklet {n}")))
            })
            .collect()
    }
}

pub fn write_corpus(root: &Path, corpus: &Corpus) -> Result<(), EvalError> {
    fs::create_dir_all(root.join("splits"))?;
    fs::create_dir_all(root.join("tracklets"))?;
    fs::write(root.join("manifest.txt"), corpus.manifest.to_text())?;
    for part in ["train", "val", "test"] {
        let mut text = String::new();
        for n in corpus.split.get(part).expect("known split") {
            text.push_str(n);
            text.push('\n');
        }
        fs::write(root.join("splits").join(format!("{part}.txt")), text)?;
    }
    for t in &corpus.tracklets {
        write_tracklet(&root.join("tracklets").join(&t.meta().name), t)?;
    }
    Ok(())
}

pub fn read_corpus(root: &Path) -> Result<Corpus, EvalError> {
    let manifest = CorpusManifest::parse(&fs::read_to_string(root.join("manifest.txt"))?)?;
    let read_split = |part: &str| -> Result<Vec<String>, EvalError> {
        let text = fs::read_to_string(root.join("splits").join(format!("{part}.txt")))?;
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    };
    let split = Split { train: read_split("train")?, val: read_split("val")?, test: read_split("test")? };
    let mut names: Vec<String> = split.train.iter().chain(&split.val).chain(&split.test).cloned().collect();
    names.sort();
    let tracklets = names
        .iter()
        .map(|n| read_tracklet(&root.join("tracklets").join(n)))
        .collect::<Result<Vec<_>, _>>()?;
    if tracklets.len() != manifest.count {
        return Err(EvalError::Format(format!("manifest lists {} tracklets, splits {}", manifest.count, tracklets.len())));
    }
    Ok(Corpus { manifest, split, tracklets })
}
