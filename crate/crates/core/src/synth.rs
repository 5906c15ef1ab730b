//! Deterministic synthetic tracking sequences with exact ground truth.
//!
//! A textured object moves along a parametric path over a flat background
//! with static textured clutter. Its size at normalized time `u` is
//! `(base_w * s(u) * a(u), base_h * s(u) / a(u))`, with scale `s` and
//! aspect `a` interpolated linearly between their start and end values.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::config::KvDoc;
use crate::error::{CoreError, Result};
use crate::geometry::BBox;
use crate::image::Image;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Rectangle,
    Ellipse,
    Textured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    /// Straight from start to end.
    Linear,
    /// The linear drift plus `amp_x sin(2 pi c u)`, `amp_y cos(2 pi c u) - amp_y`
    /// offsets, so the path still starts at the start point.
    Sinusoidal,
}

macro_rules! named_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    _ => Err(format!("expected one of: {}", [$($s),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s,)+ })
            }
        }
    };
}

named_enum!(ObjectKind, ObjectKind::Rectangle => "rectangle", ObjectKind::Ellipse => "ellipse", ObjectKind::Textured => "textured");
named_enum!(Motion, Motion::Linear => "linear", Motion::Sinusoidal => "sinusoidal");

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub object: ObjectKind,
    pub base_w: f64,
    pub base_h: f64,
    pub motion: Motion,
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub amplitude: (f64, f64),
    pub cycles: f64,
    pub scale: (f64, f64),
    pub aspect: (f64, f64),
    pub clutter: usize,
    /// Minimum per-channel distance of object and clutter colours from
    /// the background colour.
    pub contrast: f64,
    pub noise: f64,
    pub background: [u8; 3],
    /// Texture cells per object side.
    pub texture_cells: usize,
    pub seed: u64,
    /// Object appearance; equal values give identical objects.
    pub texture_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 320,
            height: 240,
            frames: 20,
            object: ObjectKind::Textured,
            base_w: 44.0,
            base_h: 36.0,
            motion: Motion::Sinusoidal,
            start: (110.0, 110.0),
            end: (210.0, 130.0),
            amplitude: (10.0, 14.0),
            cycles: 1.0,
            scale: (1.0, 1.0),
            aspect: (1.0, 1.0),
            clutter: 4,
            contrast: 60.0,
            noise: 4.0,
            background: [110, 110, 110],
            texture_cells: 4,
            seed: 1,
            texture_seed: 1,
        }
    }
}

fn lerp((a, b): (f64, f64), u: f64) -> f64 {
    a + (b - a) * u
}

struct Pair((f64, f64));

impl FromStr for Pair {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
        Ok(Pair((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?)))
    }
}

struct Rgb([u8; 3]);

impl FromStr for Rgb {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<u8> = s.split(',').map(|p| p.trim().parse::<u8>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
        v.try_into().map(Rgb).map_err(|_| "expected `r,g,b`".to_string())
    }
}

impl SynthSpec {
    /// Parses `synth.*` keys; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let d = SynthSpec::default();
        let seed = doc.take_or("synth.seed", d.seed)?;
        let spec = SynthSpec {
            width: doc.take_or("synth.width", d.width)?,
            height: doc.take_or("synth.height", d.height)?,
            frames: doc.take_or("synth.frames", d.frames)?,
            object: doc.take_or("synth.object", d.object)?,
            base_w: doc.take_or("synth.base_w", d.base_w)?,
            base_h: doc.take_or("synth.base_h", d.base_h)?,
            motion: doc.take_or("synth.motion", d.motion)?,
            start: doc.take_or("synth.start", Pair(d.start))?.0,
            end: doc.take_or("synth.end", Pair(d.end))?.0,
            amplitude: doc.take_or("synth.amplitude", Pair(d.amplitude))?.0,
            cycles: doc.take_or("synth.cycles", d.cycles)?,
            scale: doc.take_or("synth.scale", Pair(d.scale))?.0,
            aspect: doc.take_or("synth.aspect", Pair(d.aspect))?.0,
            clutter: doc.take_or("synth.clutter", d.clutter)?,
            contrast: doc.take_or("synth.contrast", d.contrast)?,
            noise: doc.take_or("synth.noise", d.noise)?,
            background: doc.take_or("synth.background", Rgb(d.background))?.0,
            texture_cells: doc.take_or("synth.texture_cells", d.texture_cells)?,
            texture_seed: doc.take_or("synth.texture_seed", seed)?,
            seed,
        };
        doc.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn serialize(&self) -> String {
        let p = |(a, b): (f64, f64)| format!("{a},{b}");
        let [r, g, b] = self.background;
        [
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("frames", self.frames.to_string()),
            ("object", self.object.to_string()),
            ("base_w", self.base_w.to_string()),
            ("base_h", self.base_h.to_string()),
            ("motion", self.motion.to_string()),
            ("start", p(self.start)),
            ("end", p(self.end)),
            ("amplitude", p(self.amplitude)),
            ("cycles", self.cycles.to_string()),
            ("scale", p(self.scale)),
            ("aspect", p(self.aspect)),
            ("clutter", self.clutter.to_string()),
            ("contrast", self.contrast.to_string()),
            ("noise", self.noise.to_string()),
            ("background", format!("{r},{g},{b}")),
            ("texture_cells", self.texture_cells.to_string()),
            ("seed", self.seed.to_string()),
            ("texture_seed", self.texture_seed.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("synth.{k} = {v}\n"))
        .collect()
    }

    pub fn time(&self, t: usize) -> f64 {
        if self.frames <= 1 {
            0.0
        } else {
            t as f64 / (self.frames - 1) as f64
        }
    }

    pub fn scale_at(&self, t: usize) -> f64 {
        lerp(self.scale, self.time(t))
    }

    pub fn aspect_at(&self, t: usize) -> f64 {
        lerp(self.aspect, self.time(t))
    }

    pub fn center_at(&self, t: usize) -> (f64, f64) {
        let u = self.time(t);
        let (x, y) = (lerp((self.start.0, self.end.0), u), lerp((self.start.1, self.end.1), u));
        match self.motion {
            Motion::Linear => (x, y),
            Motion::Sinusoidal => {
                let ph = 2.0 * PI * self.cycles * u;
                (x + self.amplitude.0 * ph.sin(), y + self.amplitude.1 * (ph.cos() - 1.0))
            }
        }
    }

    pub fn box_at(&self, t: usize) -> BBox {
        let (s, a) = (self.scale_at(t), self.aspect_at(t));
        let (cx, cy) = self.center_at(t);
        BBox::new(cx, cy, self.base_w * s * a, self.base_h * s / a)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(CoreError::config(format!("synth.{k}"), m));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad("frames", "frame size and count must be positive".into());
        }
        if !(self.base_w > 0.0 && self.base_h > 0.0) {
            return bad("base_w", "base size must be positive".into());
        }
        for (k, (a, b)) in [("scale", self.scale), ("aspect", self.aspect)] {
            if !(a > 0.0 && b > 0.0) {
                return bad(k, format!("trajectory values must be positive, got {a},{b}"));
            }
        }
        if !(self.noise >= 0.0) || !(self.contrast >= 0.0) {
            return bad("noise", "noise and contrast must be nonnegative".into());
        }
        if self.texture_cells == 0 {
            return bad("texture_cells", "must be positive".into());
        }
        let c = self.contrast.ceil();
        if let Some(ch) = self.background.iter().position(|&b| b as f64 + c > 255.0 && (b as f64) < c) {
            return bad("contrast", format!("{} is unreachable from background channel {ch}", self.contrast));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for t in 0..self.frames {
            let [x1, y1, x2, y2] = self.box_at(t).corners();
            if x1 < 0.0 || y1 < 0.0 || x2 > w || y2 > h {
                return bad("start", format!("object leaves the {w}x{h} frame at frame {}", t + 1));
            }
        }
        Ok(())
    }
}

/// Grid of colours, each channel at least `contrast` from the background.
#[derive(Debug, Clone)]
struct Texture {
    cells: usize,
    colors: Vec<[u8; 3]>,
}

impl Texture {
    fn new(cells: usize, background: [u8; 3], contrast: f64, rng: &mut Rng) -> Self {
        let c = contrast.ceil();
        let colors = (0..cells * cells)
            .map(|_| {
                background.map(|b| {
                    let b = b as f64;
                    let up = b + c <= 255.0;
                    let down = b - c >= 0.0;
                    let go_up = match (up, down) {
                        (true, true) => rng.random::<bool>(),
                        (u, _) => u,
                    };
                    let room = if go_up { 255.0 - b } else { b };
                    let d = c + rng.random::<f64>() * (room - c).max(0.0);
                    let v = if go_up { b + d } else { b - d };
                    // round away from the background so the distance stays >= c
                    (if go_up { v.floor() } else { v.ceil() }).clamp(0.0, 255.0) as u8
                })
            })
            .collect();
        Texture { cells, colors }
    }

    fn at(&self, u: f64, v: f64) -> [u8; 3] {
        let n = self.cells;
        let i = ((v * n as f64) as usize).min(n - 1);
        let j = ((u * n as f64) as usize).min(n - 1);
        self.colors[i * n + j]
    }
}

fn paint(img: &mut Image, b: &BBox, kind: ObjectKind, tex: &Texture) -> usize {
    let [x1, y1, x2, y2] = b.corners();
    let (w, h) = (img.width as f64, img.height as f64);
    let mut painted = 0;
    for py in (y1.floor().max(0.0) as usize)..(y2.ceil().min(h) as usize) {
        for px in (x1.floor().max(0.0) as usize)..(x2.ceil().min(w) as usize) {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            if x < x1 || x >= x2 || y < y1 || y >= y2 {
                continue;
            }
            let (u, v) = ((x - x1) / b.w, (y - y1) / b.h);
            let color = match kind {
                ObjectKind::Textured => tex.at(u, v),
                ObjectKind::Rectangle => tex.colors[0],
                ObjectKind::Ellipse => {
                    if (2.0 * u - 1.0).powi(2) + (2.0 * v - 1.0).powi(2) > 1.0 {
                        continue;
                    }
                    tex.colors[0]
                }
            };
            img.set_pixel(px, py, color);
            painted += 1;
        }
    }
    painted
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<Image>,
    pub gt: Vec<BBox>,
}

/// Frames without noise, for checking appearance invariants.
pub fn render_clean(spec: &SynthSpec) -> Result<SynthSequence> {
    spec.validate()?;
    let object = Texture::new(spec.texture_cells, spec.background, spec.contrast, &mut rng::stream(spec.texture_seed, "synth.object"));
    let mut crng = rng::stream(spec.seed, "synth.clutter");
    let (w, h) = (spec.width as f64, spec.height as f64);
    let clutter: Vec<(BBox, Texture)> = (0..spec.clutter)
        .map(|_| {
            let bw = spec.base_w * (0.6 + 0.6 * crng.random::<f64>());
            let bh = spec.base_h * (0.6 + 0.6 * crng.random::<f64>());
            let cx = bw / 2.0 + crng.random::<f64>() * (w - bw).max(0.0);
            let cy = bh / 2.0 + crng.random::<f64>() * (h - bh).max(0.0);
            let tex = Texture::new(spec.texture_cells, spec.background, spec.contrast, &mut crng);
            (BBox::new(cx, cy, bw, bh), tex)
        })
        .collect();
    let mut frames = Vec::with_capacity(spec.frames);
    let mut gt = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut img = Image::filled(spec.width, spec.height, spec.background);
        for (b, tex) in &clutter {
            paint(&mut img, b, ObjectKind::Textured, tex);
        }
        let b = spec.box_at(t);
        paint(&mut img, &b, spec.object, &object);
        frames.push(img);
        gt.push(b);
    }
    Ok(SynthSequence { frames, gt })
}

pub fn generate(spec: &SynthSpec) -> Result<SynthSequence> {
    let mut seq = render_clean(spec)?;
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| CoreError::config("synth.noise", e.to_string()))?;
        let mut nrng = rng::stream(spec.seed, "synth.noise");
        for f in &mut seq.frames {
            for v in &mut f.data {
                *v = (*v as f64 + normal.sample(&mut nrng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(seq)
}

/// Colour of the object texture cells (for appearance checks).
pub fn object_colors(spec: &SynthSpec) -> Vec<[u8; 3]> {
    Texture::new(spec.texture_cells, spec.background, spec.contrast, &mut rng::stream(spec.texture_seed, "synth.object")).colors
}
