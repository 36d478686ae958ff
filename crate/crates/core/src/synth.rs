//! Synthetic crowd scenes with a known scale law.
//!
//! Heads are bright squares or discs on a noisy background, placed with an
//! overlap cap. Every head box is integer-aligned, so its annotation box is
//! exactly the set of pixels it may light up.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, save_scene, write_json};
use crate::seed::derive_seed;
use crate::types::{ImageGrid, InstanceAnnotation, Scene};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadStyle {
    #[default]
    Square,
    Disc,
}

/// Heads whose centers fall in rows `[v_lo, v_hi) * H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub v_lo: f64,
    pub v_hi: f64,
    pub mean_area: f64,
    /// Relative half-width of the uniform area jitter.
    pub jitter: f64,
    /// Inclusive range of heads requested per scene.
    pub count: (usize, usize),
}

/// `area = a * exp(b * v) * exp(noise * N(0, 1))` with `v` uniform over the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveLaw {
    pub a: f64,
    pub b: f64,
    pub noise: f64,
    pub count: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleLayout {
    Bands(Vec<BandSpec>),
    Perspective(PerspectiveLaw),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub layout: ScaleLayout,
    pub head_style: HeadStyle,
    pub background: f64,
    pub foreground: f64,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    pub max_iou: f64,
    /// Minimum empty pixels between any two heads; 0 lets them touch or overlap up to `max_iou`.
    #[serde(default)]
    pub min_gap: usize,
    pub max_tries: usize,
    pub min_side: usize,
}

impl SynthConfig {
    /// Three bands with mean areas 60 / 250 / 1000 from top to bottom on a 512x512 grid.
    pub fn strong_shift() -> Self {
        Self {
            width: 512,
            height: 512,
            layout: ScaleLayout::Bands(vec![
                BandSpec {
                    v_lo: 0.0,
                    v_hi: 1.0 / 3.0,
                    mean_area: 60.0,
                    jitter: 0.2,
                    count: (260, 346),
                },
                BandSpec {
                    v_lo: 1.0 / 3.0,
                    v_hi: 2.0 / 3.0,
                    mean_area: 250.0,
                    jitter: 0.2,
                    count: (25, 33),
                },
                BandSpec {
                    v_lo: 2.0 / 3.0,
                    v_hi: 1.0,
                    mean_area: 1000.0,
                    jitter: 0.2,
                    count: (10, 13),
                },
            ]),
            head_style: HeadStyle::Disc,
            background: 0.3,
            foreground: 0.6,
            noise: 0.1,
            max_iou: 0.3,
            min_gap: 1,
            max_tries: 200,
            min_side: 2,
        }
    }

    /// Continuous perspective law: areas grow smoothly from ~30 at the top to ~1000 at the bottom.
    pub fn perspective() -> Self {
        Self {
            layout: ScaleLayout::Perspective(PerspectiveLaw {
                a: 30.0,
                b: (1000.0f64 / 30.0).ln(),
                noise: 0.15,
                count: (150, 200),
            }),
            ..Self::strong_shift()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synth config", "grid must be non-empty"));
        }
        for (what, v) in [
            ("background", self.background),
            ("foreground", self.foreground),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("synth config", format!("{what} {v} outside [0, 1]")));
            }
        }
        if !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.max_iou) {
            return Err(Error::invalid("synth config", "noise must be >= 0 and max_iou in [0, 1]"));
        }
        match &self.layout {
            ScaleLayout::Bands(bands) => {
                if bands.is_empty() {
                    return Err(Error::invalid("synth config", "no bands"));
                }
                let mut sorted: Vec<&BandSpec> = bands.iter().collect();
                sorted.sort_by(|a, b| a.v_lo.total_cmp(&b.v_lo));
                for b in &sorted {
                    if !(0.0 <= b.v_lo && b.v_lo < b.v_hi && b.v_hi <= 1.0) {
                        return Err(Error::invalid("synth config", "band range must lie in [0, 1]"));
                    }
                    if !(b.mean_area > 0.0) || !(0.0..1.0).contains(&b.jitter) || b.count.0 > b.count.1 {
                        return Err(Error::invalid("synth config", "bad band area, jitter or count"));
                    }
                }
                if sorted.windows(2).any(|w| w[1].v_lo < w[0].v_hi) {
                    return Err(Error::invalid("synth config", "band ranges overlap"));
                }
            }
            ScaleLayout::Perspective(law) => {
                if !(law.a > 0.0) || !law.b.is_finite() || !(law.noise >= 0.0) || law.count.0 > law.count.1 {
                    return Err(Error::invalid("synth config", "bad perspective law"));
                }
            }
        }
        Ok(())
    }
}

/// An integer-aligned square head box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadBox {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
    /// Generating band, or 0 for the continuous law.
    pub band: usize,
}

impl HeadBox {
    pub fn annotation(&self) -> InstanceAnnotation {
        let s = self.side as f64;
        InstanceAnnotation::new(self.x0 as f64 + s / 2.0, self.y0 as f64 + s / 2.0, s, s)
            .expect("positive side")
    }

    fn iou(&self, other: &HeadBox) -> f64 {
        let ix = (self.x0 + self.side).min(other.x0 + other.side) as i64 - self.x0.max(other.x0) as i64;
        let iy = (self.y0 + self.side).min(other.y0 + other.side) as i64 - self.y0.max(other.y0) as i64;
        if ix <= 0 || iy <= 0 {
            return 0.0;
        }
        let inter = (ix * iy) as f64;
        inter / ((self.side * self.side + other.side * other.side) as f64 - inter)
    }

    /// Empty pixels between the boxes along the more separated axis; 0 when they touch or overlap.
    fn gap(&self, other: &HeadBox) -> usize {
        let axis = |a0: usize, a1: usize, b0: usize, b1: usize| b0.saturating_sub(a1).max(a0.saturating_sub(b1));
        let gx = axis(self.x0, self.x0 + self.side, other.x0, other.x0 + other.side);
        let gy = axis(self.y0, self.y0 + self.side, other.y0, other.y0 + other.side);
        gx.max(gy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub id: String,
    pub layout: ScaleLayout,
    pub heads: Vec<HeadBox>,
    pub requested: usize,
}

impl SynthTruth {
    pub fn band_of(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.band).collect()
    }
}

struct Request {
    row: f64,
    area: f64,
    band: usize,
}

fn requests(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Request> {
    let h = cfg.height as f64;
    let mut out = Vec::new();
    match &cfg.layout {
        ScaleLayout::Bands(bands) => {
            for (k, b) in bands.iter().enumerate() {
                let n = rng.random_range(b.count.0..=b.count.1);
                for _ in 0..n {
                    let j = if b.jitter > 0.0 {
                        rng.random_range(-b.jitter..b.jitter)
                    } else {
                        0.0
                    };
                    out.push(Request {
                        row: rng.random_range(b.v_lo * h..b.v_hi * h),
                        area: b.mean_area * (1.0 + j),
                        band: k,
                    });
                }
            }
        }
        ScaleLayout::Perspective(law) => {
            let n = rng.random_range(law.count.0..=law.count.1);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for _ in 0..n {
                let v: f64 = rng.random_range(0.0..1.0);
                let z: f64 = normal.sample(rng);
                out.push(Request {
                    row: v * h,
                    area: law.a * (law.b * v).exp() * (law.noise * z).exp(),
                    band: 0,
                });
            }
        }
    }
    out
}

/// Tries to place one head of the given area centered near `row`; returns
/// `None` when every attempt breaks the overlap cap.
pub fn place_head(
    cfg: &SynthConfig,
    placed: &[HeadBox],
    row: f64,
    area: f64,
    band: usize,
    rng: &mut ChaCha8Rng,
) -> Option<HeadBox> {
    let side = (area.sqrt().round() as usize)
        .max(cfg.min_side)
        .min(cfg.width)
        .min(cfg.height);
    let y0 = ((row - side as f64 / 2.0).round().max(0.0) as usize).min(cfg.height - side);
    for _ in 0..cfg.max_tries.max(1) {
        let x0 = rng.random_range(0..=cfg.width - side);
        let cand = HeadBox { x0, y0, side, band };
        let fits = |p: &HeadBox| {
            if cfg.min_gap > 0 {
                cand.gap(p) >= cfg.min_gap
            } else {
                cand.iou(p) <= cfg.max_iou
            }
        };
        if placed.iter().all(fits) {
            return Some(cand);
        }
    }
    None
}

/// Renders heads over a noisy background and quantizes to 8 bits so the
/// image survives a PNG round trip unchanged.
pub fn render(cfg: &SynthConfig, heads: &[HeadBox], rng: &mut ChaCha8Rng) -> Result<ImageGrid> {
    let (w, h) = (cfg.width, cfg.height);
    let normal = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::invalid("noise", e.to_string()))?;
    let noise = |rng: &mut ChaCha8Rng| if cfg.noise > 0.0 { normal.sample(rng) } else { 0.0 };
    let mut data: Vec<f64> = (0..w * h).map(|_| cfg.background + noise(rng)).collect();
    for head in heads {
        let s = head.side as f64;
        let (cx, cy) = (head.x0 as f64 + s / 2.0, head.y0 as f64 + s / 2.0);
        for r in head.y0..head.y0 + head.side {
            for c in head.x0..head.x0 + head.side {
                let inside = match cfg.head_style {
                    HeadStyle::Square => true,
                    HeadStyle::Disc => {
                        (c as f64 + 0.5 - cx).powi(2) + (r as f64 + 0.5 - cy).powi(2) <= (s / 2.0).powi(2)
                    }
                };
                if inside {
                    data[r * w + c] = cfg.foreground + noise(rng);
                }
            }
        }
    }
    for v in &mut data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    ImageGrid::new(w, h, 1, data)
}

pub fn scene_from_heads(id: &str, image: ImageGrid, heads: &[HeadBox]) -> Result<Scene> {
    Scene::new(id, image, heads.iter().map(HeadBox::annotation).collect())
}

/// Generates one scene; all randomness comes from `seed`.
pub fn generate_scene(cfg: &SynthConfig, id: &str, seed: u64) -> Result<(Scene, SynthTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reqs = requests(cfg, &mut rng);
    let mut heads = Vec::with_capacity(reqs.len());
    for req in &reqs {
        if let Some(head) = place_head(cfg, &heads, req.row, req.area, req.band, &mut rng) {
            heads.push(head);
        }
    }
    if heads.len() < reqs.len() {
        log::warn!("{id}: placed {} of {} heads", heads.len(), reqs.len());
    }
    let image = render(cfg, &heads, &mut rng)?;
    let scene = scene_from_heads(id, image, &heads)?;
    let truth = SynthTruth {
        id: id.to_string(),
        layout: cfg.layout.clone(),
        heads,
        requested: reqs.len(),
    };
    Ok((scene, truth))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn new(n_train: usize, n_val: usize, n_test: usize) -> Self {
        let ids = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}_{i:04}")).collect();
        Self {
            train: ids("train", n_train),
            val: ids("val", n_val),
            test: ids("test", n_test),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join("splits.json"))
    }

    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::invalid("split", format!("unknown split {other:?}"))),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Scenes of one benchmark, generated in memory.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub splits: Splits,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
    pub truth: Vec<SynthTruth>,
}

pub fn scene_seed(seed: u64, id: &str) -> u64 {
    derive_seed(seed, id, "synth")
}

pub fn build_benchmark(cfg: &SynthConfig, splits: &Splits, seed: u64) -> Result<Benchmark> {
    // every scene owns its seed, so parallel generation stays reproducible
    let gen = |ids: &[String]| -> Result<(Vec<Scene>, Vec<SynthTruth>)> {
        let pairs: Vec<(Scene, SynthTruth)> = ids
            .par_iter()
            .map(|id| generate_scene(cfg, id, scene_seed(seed, id)))
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().unzip())
    };
    let (train, mut truth) = gen(&splits.train)?;
    let (val, t) = gen(&splits.val)?;
    truth.extend(t);
    let (test, t) = gen(&splits.test)?;
    truth.extend(t);
    Ok(Benchmark {
        splits: splits.clone(),
        train,
        val,
        test,
        truth,
    })
}

/// Writes `images/<id>.png`, `anns/<id>.json`, `truth/<id>.json`, `splits.json`
/// and the generating `config.json` under `dir`.
pub fn write_benchmark(dir: &Path, cfg: &SynthConfig, bench: &Benchmark) -> Result<()> {
    let scenes = bench.train.iter().chain(&bench.val).chain(&bench.test);
    for (scene, truth) in scenes.zip(&bench.truth) {
        save_scene(
            scene,
            &dir.join("anns").join(format!("{}.json", scene.id)),
            &dir.join("images").join(format!("{}.png", scene.id)),
        )?;
        write_json(&dir.join("truth").join(format!("{}.json", scene.id)), truth)?;
    }
    write_json(&dir.join("splits.json"), &bench.splits)?;
    write_json(&dir.join("config.json"), cfg)
}

pub fn generate_benchmark(
    dir: &Path,
    cfg: &SynthConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Benchmark> {
    let bench = build_benchmark(cfg, &Splits::new(n_train, n_val, n_test), seed)?;
    write_benchmark(dir, cfg, &bench)?;
    Ok(bench)
}
