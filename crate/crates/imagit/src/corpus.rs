//! Corpus directory: `manifest.tsv`, `src.vocab`, `tgt.vocab`, `images/*.ppm`.
//!
//! The manifest is tab-separated with header `split	src	tgt	image_path`;
//! image paths are relative to the corpus directory.

use std::path::{Path, PathBuf};

use imagit_core::captioner::CaptionExample;
use imagit_core::data::{render_rgb8, rgb8_to_tensor, sample_scenes, source_vocab, target_vocab, Split};
use imagit_core::model::Example;
use imagit_core::numerics::Tensor;
use imagit_core::text_encoder::Vocabulary;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{ppm, Error, Result};

pub const MANIFEST: &str = "manifest.tsv";
pub const SRC_VOCAB: &str = "src.vocab";
pub const TGT_VOCAB: &str = "tgt.vocab";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub split: String,
    pub src: String,
    pub tgt: String,
    pub image_path: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self { train: 512, dev: 64, test: 64 }
    }
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().delimiter(b'\t').quote_style(csv::QuoteStyle::Never).from_path(path)?)
}

pub fn write_vocab(path: &Path, v: &Vocabulary) -> Result<()> {
    std::fs::write(path, v.to_lines()).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Vocabulary::from_lines(&text)?)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(Error::Missing { what: "manifest", path: path.to_path_buf() });
    }
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_path(path)?;
    let rows: Vec<ManifestRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    for row in &rows {
        Split::parse(&row.split)?;
    }
    Ok(rows)
}

/// Render a corpus of distinct scenes into `dir` (which must exist).
pub fn generate(dir: &Path, seed: u64, sizes: Sizes, side: usize) -> Result<Vec<ManifestRow>> {
    if side < 16 {
        return Err(Error::Format("image side must be at least 16".into()));
    }
    let scenes = sample_scenes(seed, sizes.train, sizes.dev, sizes.test)?;
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut counters = [0usize; 3];
    let rows: Vec<ManifestRow> = scenes
        .iter()
        .map(|(split, scene)| {
            let i = &mut counters[*split as usize];
            let row = ManifestRow {
                split: split.name().to_string(),
                src: scene.source(),
                tgt: scene.target(),
                image_path: format!("images/{}_{:04}.ppm", split.name(), i),
            };
            *i += 1;
            row
        })
        .collect();
    scenes.par_iter().zip(rows.par_iter()).try_for_each(|((_, scene), row)| ppm::write(&dir.join(&row.image_path), side, side, &render_rgb8(scene, side)))?;
    write_manifest(&dir.join(MANIFEST), &rows)?;
    write_vocab(&dir.join(SRC_VOCAB), &source_vocab())?;
    write_vocab(&dir.join(TGT_VOCAB), &target_vocab())?;
    Ok(rows)
}

/// One loaded manifest row.
#[derive(Clone, Debug)]
pub struct Item {
    pub split: Split,
    pub src: String,
    pub tgt: String,
    pub image: Tensor,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub items: Vec<Item>,
    pub side: usize,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let rows = read_manifest(&dir.join(MANIFEST))?;
        let src_vocab = read_vocab(&dir.join(SRC_VOCAB))?;
        let tgt_vocab = read_vocab(&dir.join(TGT_VOCAB))?;
        let loaded: Vec<(usize, Item)> = rows
            .par_iter()
            .map(|row| {
                let path = dir.join(&row.image_path);
                let (w, h, px) = ppm::read(&path)?;
                if w != h {
                    return Err(Error::Format(format!("{}: image is not square", path.display())));
                }
                let image = rgb8_to_tensor(&px, w)?;
                Ok((w, Item { split: Split::parse(&row.split)?, src: row.src.clone(), tgt: row.tgt.clone(), image }))
            })
            .collect::<Result<_>>()?;
        let side = loaded.first().map_or(0, |(w, _)| *w);
        if loaded.iter().any(|(w, _)| *w != side) {
            return Err(Error::Format("images differ in size".into()));
        }
        Ok(Self { dir: dir.to_path_buf(), src_vocab, tgt_vocab, items: loaded.into_iter().map(|(_, it)| it).collect(), side })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(move |it| it.split == split)
    }

    pub fn sources(&self, split: Split) -> Vec<String> {
        self.split(split).map(|it| it.src.clone()).collect()
    }

    pub fn targets(&self, split: Split) -> Vec<String> {
        self.split(split).map(|it| it.tgt.clone()).collect()
    }

    pub fn examples(&self, split: Split) -> Result<Vec<Example>> {
        self.split(split)
            .map(|it| Ok(Example { src: self.src_vocab.encode(&it.src)?, tgt: self.tgt_vocab.encode(&it.tgt)?, image: it.image.clone() }))
            .collect()
    }

    pub fn caption_examples(&self, split: Split) -> Result<Vec<CaptionExample>> {
        self.split(split).map(|it| Ok(CaptionExample { image: it.image.clone(), src: self.src_vocab.encode(&it.src)?.real_ids() })).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let rows = generate(dir.path(), 3, Sizes { train: 5, dev: 2, test: 1 }, 16).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[5].image_path, "images/dev_0000.ppm");
        let c = Corpus::load(dir.path()).unwrap();
        assert_eq!(c.side, 16);
        assert_eq!(c.examples(Split::Train).unwrap().len(), 5);
        assert_eq!(c.targets(Split::Test)[0], rows[7].tgt);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.starts_with("split\tsrc\ttgt\timage_path\n"));
    }
}
