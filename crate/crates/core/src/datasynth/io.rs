//! Dataset persistence: 8-bit grayscale PNGs plus a line-delimited
//! manifest. Poses round-trip exactly (written in shortest-round-trip
//! decimal form).

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, Luma};

use crate::datasynth::{SamplePair, SetTag};
use crate::diff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::estimator::PoseSim2;

pub const MANIFEST_NAME: &str = "manifest.csv";
const HEADER: &str = "template,source,tx,ty,theta,scale,tag,seed";

pub fn save_gray_png<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (h, w) = img.dims2()?;
    let mut out = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = (img.at2(r, c).to_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(c as u32, r as u32, Luma([v]));
        }
    }
    out.save(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn load_gray_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = img
        .pixels()
        .map(|p| T::from_f64(p.0[0] as f64 / 255.0))
        .collect();
    Tensor::from_vec(&[h, w], data)
}

/// A pair as stored on disk (images re-read from PNG, pose exact).
#[derive(Clone, Debug)]
pub struct StoredPair<T: Scalar> {
    pub template: Tensor<T>,
    pub source: Tensor<T>,
    pub pose: PoseSim2,
    pub tag: SetTag,
    pub seed: u64,
}

/// Write pairs and the manifest; returns the manifest path.
pub fn write_dataset<T: Scalar>(dir: &Path, pairs: &[SamplePair<T>]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for (i, p) in pairs.iter().enumerate() {
        let tname = format!("template_{i:05}.png");
        let sname = format!("source_{i:05}.png");
        save_gray_png(&dir.join(&tname), &p.template)?;
        save_gray_png(&dir.join(&sname), &p.source)?;
        manifest.push_str(&format!(
            "{tname},{sname},{},{},{},{},{},{}\n",
            p.pose.tx,
            p.pose.ty,
            p.pose.theta,
            p.pose.scale,
            p.tag.tag(),
            p.seed
        ));
    }
    let mpath = dir.join(MANIFEST_NAME);
    fs::write(&mpath, manifest)?;
    Ok(mpath)
}

pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<Vec<StoredPair<T>>> {
    let mpath = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::Format {
        path: mpath.display().to_string(),
        msg: format!("cannot read manifest: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != HEADER {
                return Err(Error::Format {
                    path: mpath.display().to_string(),
                    msg: format!("unexpected header '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let fail = |msg: String| Error::Format {
            path: mpath.display().to_string(),
            msg: format!("record {i}: {msg}"),
        };
        if fields.len() != 8 {
            return Err(fail(format!("expected 8 fields, got {}", fields.len())));
        }
        let fnum = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| fail(format!("bad number '{s}'")))
        };
        let pose = PoseSim2::new(fnum(fields[5])?, fnum(fields[4])?, fnum(fields[2])?, fnum(fields[3])?);
        let tag = SetTag::from_tag(fields[6]).ok_or_else(|| fail(format!("bad tag '{}'", fields[6])))?;
        let seed: u64 = fields[7]
            .parse()
            .map_err(|_| fail(format!("bad seed '{}'", fields[7])))?;
        let template = load_gray_png(&dir.join(fields[0]))
            .map_err(|e| fail(format!("template: {e}")))?;
        let source = load_gray_png(&dir.join(fields[1]))
            .map_err(|e| fail(format!("source: {e}")))?;
        out.push(StoredPair {
            template,
            source,
            pose,
            tag,
            seed,
        });
    }
    Ok(out)
}
