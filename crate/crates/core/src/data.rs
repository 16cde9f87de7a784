//! Shape-world: two-object scenes, their captions, the oracle translation,
//! and a deterministic renderer.
//!
//! Palette (RGB, 8-bit) on a white background:
//!
//! | color  | rgb            |
//! |--------|----------------|
//! | red    | (220, 40, 40)  |
//! | green  | (40, 170, 60)  |
//! | blue   | (40, 70, 220)  |
//! | yellow | (230, 200, 30) |
//! | purple | (150, 60, 190) |
//! | cyan   | (40, 200, 210) |
//!
//! Object 1 is drawn with radius `0.2·R` and object 2 with `0.14·R`, so a
//! scene and its mirrored relation render differently.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::numerics::{RngStreams, Stream, Tensor};
use crate::text_encoder::{TokenSeq, Vocabulary};
use crate::{Error, Result};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "cyan"];
pub const SHAPES: [&str; 4] = ["circle", "square", "triangle", "star"];
pub const RELATIONS: [&str; 4] = ["leftof", "rightof", "above", "below"];

pub const PALETTE: [[u8; 3]; 6] = [[220, 40, 40], [40, 170, 60], [40, 70, 220], [230, 200, 30], [150, 60, 190], [40, 200, 210]];

const LEXICON: [(&str, &str); 15] = [
    ("a", "ein"),
    ("red", "rot"),
    ("green", "gruen"),
    ("blue", "blau"),
    ("yellow", "gelb"),
    ("purple", "lila"),
    ("cyan", "zyan"),
    ("circle", "kreis"),
    ("square", "quadrat"),
    ("triangle", "dreieck"),
    ("star", "stern"),
    ("leftof", "linksvon"),
    ("rightof", "rechtsvon"),
    ("above", "ueber"),
    ("below", "unter"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Object {
    pub color: usize,
    pub shape: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShapeScene {
    pub object1: Object,
    pub object2: Object,
    pub relation: usize,
}

/// Every valid scene in a fixed order.
pub fn all_scenes() -> Vec<ShapeScene> {
    let mut out = Vec::new();
    for c1 in 0..COLORS.len() {
        for s1 in 0..SHAPES.len() {
            for c2 in 0..COLORS.len() {
                for s2 in 0..SHAPES.len() {
                    if c1 == c2 && s1 == s2 {
                        continue;
                    }
                    for relation in 0..RELATIONS.len() {
                        out.push(ShapeScene {
                            object1: Object { color: c1, shape: s1 },
                            object2: Object { color: c2, shape: s2 },
                            relation,
                        });
                    }
                }
            }
        }
    }
    out
}

fn pos(list: &[&str], w: &str) -> Option<usize> {
    list.iter().position(|x| *x == w)
}

impl ShapeScene {
    /// `a COLOR SHAPE RELATION a COLOR SHAPE`
    pub fn source_words(&self) -> [&'static str; 7] {
        [
            "a",
            COLORS[self.object1.color],
            SHAPES[self.object1.shape],
            RELATIONS[self.relation],
            "a",
            COLORS[self.object2.color],
            SHAPES[self.object2.shape],
        ]
    }

    pub fn source(&self) -> String {
        self.source_words().join(" ")
    }

    pub fn target(&self) -> String {
        let w = self.source_words();
        let order = [0, 1, 2, 4, 5, 6, 3];
        order.iter().map(|&i| lex(w[i]).expect("lexicon covers grammar")).collect::<Vec<_>>().join(" ")
    }

    pub fn parse_source(sentence: &str) -> Result<Self> {
        let w: Vec<&str> = sentence.split_whitespace().collect();
        let bad = || Error::OutOfGrammar(sentence.to_string());
        if w.len() != 7 || w[0] != "a" || w[4] != "a" {
            return Err(bad());
        }
        let obj = |c: &str, s: &str| -> Option<Object> { Some(Object { color: pos(&COLORS, c)?, shape: pos(&SHAPES, s)? }) };
        let scene = ShapeScene {
            object1: obj(w[1], w[2]).ok_or_else(bad)?,
            object2: obj(w[5], w[6]).ok_or_else(bad)?,
            relation: pos(&RELATIONS, w[3]).ok_or_else(bad)?,
        };
        if scene.object1 == scene.object2 {
            return Err(bad());
        }
        Ok(scene)
    }

    pub fn parse_target(sentence: &str) -> Result<Self> {
        let w: Vec<&str> = sentence.split_whitespace().collect();
        if w.len() != 7 {
            return Err(Error::OutOfGrammar(sentence.to_string()));
        }
        let back = |t: &str| unlex(t).ok_or_else(|| Error::OutOfGrammar(sentence.to_string()));
        let src = [back(w[0])?, back(w[1])?, back(w[2])?, back(w[6])?, back(w[3])?, back(w[4])?, back(w[5])?];
        Self::parse_source(&src.join(" "))
    }
}

fn lex(w: &str) -> Option<&'static str> {
    LEXICON.iter().find(|(s, _)| *s == w).map(|(_, t)| *t)
}

fn unlex(w: &str) -> Option<&'static str> {
    LEXICON.iter().find(|(_, t)| *t == w).map(|(s, _)| *s)
}

/// Translate a grammatical source sentence.
pub fn translate_oracle(src: &str) -> Result<String> {
    Ok(ShapeScene::parse_source(src)?.target())
}

/// Recover the source sentence from a target sentence.
pub fn inverse_oracle(tgt: &str) -> Result<String> {
    Ok(ShapeScene::parse_target(tgt)?.source())
}

pub fn source_vocab() -> Vocabulary {
    Vocabulary::new(LEXICON.iter().map(|(s, _)| *s))
}

pub fn target_vocab() -> Vocabulary {
    Vocabulary::new(LEXICON.iter().map(|(_, t)| *t))
}

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
        2 => {
            // apex up, base at dy = r
            let t = (dy + r) / (2.0 * r);
            (0.0..=1.0).contains(&t) && dx.abs() <= t * r
        }
        _ => {
            let rho = libm::sqrt(dx * dx + dy * dy);
            let theta = libm::atan2(dy, dx);
            rho <= r * (0.45 + 0.55 * libm::fabs(libm::cos(2.5 * theta)))
        }
    }
}

/// Object centres `(x1, y1), (x2, y2)` as fractions of the side.
fn centres(relation: usize) -> [(f64, f64); 2] {
    match relation {
        0 => [(0.28, 0.5), (0.72, 0.5)],
        1 => [(0.72, 0.5), (0.28, 0.5)],
        2 => [(0.5, 0.28), (0.5, 0.72)],
        _ => [(0.5, 0.72), (0.5, 0.28)],
    }
}

/// Interleaved 8-bit RGB, row-major, `side × side`.
pub fn render_rgb8(scene: &ShapeScene, side: usize) -> Vec<u8> {
    let mut px = alloc::vec![255u8; side * side * 3];
    let c = centres(scene.relation);
    let objs = [(scene.object1, c[0], 0.2), (scene.object2, c[1], 0.14)];
    let s = side as f64;
    for (obj, (cx, cy), rf) in objs {
        let r = rf * s;
        for y in 0..side {
            for x in 0..side {
                let dx = x as f64 + 0.5 - cx * s;
                let dy = y as f64 + 0.5 - cy * s;
                if inside(obj.shape, dx, dy, r) {
                    px[(y * side + x) * 3..][..3].copy_from_slice(&PALETTE[obj.color]);
                }
            }
        }
    }
    px
}

/// Interleaved RGB bytes → `[3, side, side]` tensor with values `p/127.5 − 1`.
pub fn rgb8_to_tensor(px: &[u8], side: usize) -> Result<Tensor> {
    if px.len() != side * side * 3 {
        return Err(Error::LengthMismatch(px.len(), side * side * 3));
    }
    let mut data = alloc::vec![0.0; px.len()];
    for i in 0..side * side {
        for ch in 0..3 {
            data[ch * side * side + i] = px[i * 3 + ch] as f64 / 127.5 - 1.0;
        }
    }
    Ok(Tensor::new(&[3, side, side], data)?)
}

pub fn render(scene: &ShapeScene, side: usize) -> Result<Tensor> {
    if side < 16 {
        return Err(Error::Invalid("render side must be at least 16".to_string()));
    }
    rgb8_to_tensor(&render_rgb8(scene, side), side)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            _ => Err(Error::Invalid(alloc::format!("unknown split `{s}`"))),
        }
    }
}

/// Distinct scenes drawn without replacement, in split order.
pub fn sample_scenes(seed: u64, n_train: usize, n_dev: usize, n_test: usize) -> Result<Vec<(Split, ShapeScene)>> {
    let mut scenes = all_scenes();
    let requested = n_train + n_dev + n_test;
    if requested > scenes.len() {
        return Err(Error::TooManyScenes { requested, available: scenes.len() });
    }
    scenes.shuffle(&mut RngStreams::new(seed).stream(Stream::Data));
    let splits = core::iter::repeat_n(Split::Train, n_train)
        .chain(core::iter::repeat_n(Split::Dev, n_dev))
        .chain(core::iter::repeat_n(Split::Test, n_test));
    Ok(splits.zip(scenes).collect())
}

/// Token class used by the degradation strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Color,
    Entity,
    Other,
}

pub fn token_class(word: &str) -> TokenClass {
    if COLORS.contains(&word) {
        TokenClass::Color
    } else if SHAPES.contains(&word) {
        TokenClass::Entity
    } else {
        TokenClass::Other
    }
}

/// Encode a sentence pair for training.
pub fn encode_pair(src_vocab: &Vocabulary, tgt_vocab: &Vocabulary, src: &str, tgt: &str) -> Result<(TokenSeq, TokenSeq)> {
    Ok((src_vocab.encode(src)?, tgt_vocab.encode(tgt)?))
}
