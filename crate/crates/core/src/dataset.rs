//! Samples, manifests, tiling and dataset-level statistics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::edges::{eib_at_k, extract_edges, EibResult};
use crate::error::{Error, Result};
use crate::io;
use crate::quality::{derive_quality_map, BinaryMask, ClassDistribution};

/// One `(image, unchecked mask, ground truth)` unit.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriplet {
    pub id: String,
    pub image: RgbImage,
    pub unchecked: Option<BinaryMask>,
    pub gt: BinaryMask,
}

impl SampleTriplet {
    pub fn new(
        id: impl Into<String>,
        image: RgbImage,
        unchecked: Option<BinaryMask>,
        gt: BinaryMask,
    ) -> Result<Self> {
        let dims = (image.height() as usize, image.width() as usize);
        gt.ensure_same_dims(dims)?;
        if let Some(u) = &unchecked {
            u.ensure_same_dims(dims)?;
        }
        Ok(Self {
            id: id.into(),
            image,
            unchecked,
            gt,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gt.dims()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub unchecked: Option<PathBuf>,
    pub gt: PathBuf,
}

/// Line-oriented list of samples: `id<TAB>image<TAB>unchecked|-<TAB>gt`.
/// Relative paths resolve against the manifest's directory. Blank lines and
/// lines starting with `#` are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, root: &Path, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!(
                    "expected 4 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let id = fields[0].to_string();
            if id.is_empty() || !ids.insert(id.clone()) {
                return Err(err(format!("empty or duplicate id `{id}`")));
            }
            entries.push(ManifestEntry {
                id,
                image: fields[1].into(),
                unchecked: (fields[2] != "-").then(|| fields[2].into()),
                gt: fields[3].into(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &root, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let un = e
                .unchecked
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.id,
                e.image.display(),
                un,
                e.gt.display()
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_sample(&self, e: &ManifestEntry) -> Result<SampleTriplet> {
        let image = io::read_rgb(&self.resolve(&e.image))?;
        let gt = io::read_mask(&self.resolve(&e.gt))?;
        let unchecked = match &e.unchecked {
            Some(p) => Some(io::read_mask(&self.resolve(p))?),
            None => None,
        };
        SampleTriplet::new(e.id.clone(), image, unchecked, gt)
    }

    /// All samples in manifest order.
    pub fn load_samples(&self) -> Result<Vec<SampleTriplet>> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }
}

/// Writes samples as PNGs under `dir` plus a `manifest.tsv`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[SampleTriplet]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for s in samples {
        let image = PathBuf::from(format!("{}_image.png", s.id));
        let gt = PathBuf::from(format!("{}_gt.png", s.id));
        io::write_rgb(&dir.join(&image), &s.image)?;
        io::write_mask(&dir.join(&gt), &s.gt)?;
        let unchecked = match &s.unchecked {
            Some(m) => {
                let p = PathBuf::from(format!("{}_unchecked.png", s.id));
                io::write_mask(&dir.join(&p), m)?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            unchecked,
            gt,
        });
    }
    let path = dir.join("manifest.tsv");
    Manifest {
        root: dir.to_path_buf(),
        entries,
    }
    .save(&path)?;
    Ok(path)
}

/// Non-overlapping `tile×tile` crops in raster order; margins are dropped.
/// With `drop_empty`, tiles whose ground truth has no foreground are skipped.
pub fn tile_dataset(
    sample: &SampleTriplet,
    tile: usize,
    drop_empty: bool,
) -> Result<Vec<SampleTriplet>> {
    let (h, w) = sample.dims();
    if tile == 0 || tile > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "tile size {tile} must be in 1..={} for a {h}x{w} raster",
            h.min(w)
        )));
    }
    let crop_mask = |m: &BinaryMask, y0: usize, x0: usize| {
        BinaryMask::from_fn(tile, tile, |y, x| m.get(y0 + y, x0 + x))
    };
    let mut out = Vec::new();
    for ty in 0..h / tile {
        for tx in 0..w / tile {
            let (y0, x0) = (ty * tile, tx * tile);
            let gt = crop_mask(&sample.gt, y0, x0);
            if drop_empty && gt.count_ones() == 0 {
                continue;
            }
            let image = image::imageops::crop_imm(
                &sample.image,
                x0 as u32,
                y0 as u32,
                tile as u32,
                tile as u32,
            )
            .to_image();
            let unchecked = sample.unchecked.as_ref().map(|m| crop_mask(m, y0, x0));
            out.push(SampleTriplet {
                id: format!("{}_r{ty}_c{tx}", sample.id),
                image,
                unchecked,
                gt,
            });
        }
    }
    Ok(out)
}

/// Number of tiles before filtering.
pub fn tile_count(h: usize, w: usize, tile: usize) -> usize {
    h.checked_div(tile).map_or(0, |rows| rows * (w / tile))
}

/// Pixel-pooled statistics of unchecked masks against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub pixels: usize,
    /// Class counts in channel order (TP, FP, TN, FN).
    pub counts: [usize; 4],
    pub distribution: ClassDistribution,
    pub k: i64,
    pub eib: EibResult,
    pub mask_miou: f64,
}

impl DatasetStats {
    pub fn from_parts(
        samples: usize,
        counts: [usize; 4],
        errors_in_buffer: usize,
        errors: usize,
        k: i64,
    ) -> Self {
        let eib = if errors == 0 {
            EibResult {
                percent: 0.0,
                errors_in_buffer: 0,
                errors: 0,
                undefined: true,
            }
        } else {
            EibResult {
                percent: 100.0 * errors_in_buffer as f64 / errors as f64,
                errors_in_buffer,
                errors,
                undefined: false,
            }
        };
        let [tp, fp, tn, fn_] = counts.map(|c| c as f64);
        let iou = |i: f64, u: f64| if u == 0.0 { 0.0 } else { 100.0 * i / u };
        Self {
            samples,
            pixels: counts.iter().sum(),
            counts,
            distribution: ClassDistribution::from_counts(counts),
            k,
            eib,
            mask_miou: (iou(tp, tp + fp + fn_) + iou(tn, tn + fp + fn_)) / 2.0,
        }
    }

    pub fn table(&self) -> String {
        let d = &self.distribution;
        let eib = if self.eib.undefined {
            format!("{:.2} (undefined)", self.eib.percent)
        } else {
            format!("{:.2}", self.eib.percent)
        };
        format!(
            "samples\t{}\npixels\t{}\nTP%\t{:.2}\nFP%\t{:.2}\nTN%\t{:.2}\nFN%\t{:.2}\nEIB@{}\t{}\nmask_mIoU\t{:.2}\n",
            self.samples, self.pixels, d.pct_tp, d.pct_fp, d.pct_tn, d.pct_fn, self.k, eib, self.mask_miou
        )
    }
}

/// Class distribution, EIB@k (ground-truth edges) and mask mIoU pooled over samples.
pub fn dataset_stats(samples: &[SampleTriplet], k: i64) -> Result<DatasetStats> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| s.unchecked.is_none())
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingUnchecked(missing));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut counts = [0usize; 4];
    let (mut inside, mut errors) = (0, 0);
    for s in samples {
        let q = derive_quality_map(&s.gt, s.unchecked.as_ref().expect("checked above"))?;
        for (c, n) in counts.iter_mut().zip(q.counts()) {
            *c += n;
        }
        let e = eib_at_k(&q, &extract_edges(&s.gt), k)?;
        inside += e.errors_in_buffer;
        errors += e.errors;
    }
    Ok(DatasetStats::from_parts(
        samples.len(),
        counts,
        inside,
        errors,
        k,
    ))
}
