//! Procedural synthetic pedestrian generator.
//!
//! Renders simple person figures whose attributes are planted at controlled
//! visual levels: texture attributes draw fine patterns on clothing, object
//! attributes draw small high-contrast blobs at body zones, global attributes
//! tint the whole frame. Identities keep persistent colors and build across
//! cameras so the same data serves re-identification. Everything is fully
//! determined by the spec seed.

use super::manifest::{Manifest, SampleRecord};
use super::ppm;
use super::{DataError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrLevel {
    Texture,
    Object,
    Global,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributePlan {
    pub name: String,
    pub level: AttrLevel,
    pub positive_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Brightness scale range, fraction of 1.0.
    pub brightness: f64,
    /// Position/scale jitter, fraction of the frame.
    pub crop: f64,
    /// Additive gaussian noise sigma in [0,1] units.
    pub noise: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            brightness: 0.3,
            crop: 0.1,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub num_identities: usize,
    pub attributes: Vec<AttributePlan>,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_cameras")]
    pub cameras: u32,
    #[serde(default)]
    pub jitter: JitterSpec,
    pub seed: u64,
}

fn default_cameras() -> u32 {
    2
}

impl SynthSpec {
    pub fn total_images(&self) -> usize {
        self.train_images + self.val_images + self.test_images
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_images() == 0 {
            return Err(DataError::Spec("image count must be positive".into()));
        }
        if self.num_identities == 0 {
            return Err(DataError::Spec("need at least one identity".into()));
        }
        if self.width < 32 || self.height < 32 {
            return Err(DataError::Spec(format!(
                "image size must be >= 32x32, got {}x{}",
                self.width, self.height
            )));
        }
        if self.cameras == 0 {
            return Err(DataError::Spec("need at least one camera".into()));
        }
        for a in &self.attributes {
            if !(a.positive_rate > 0.0 && a.positive_rate < 1.0) {
                return Err(DataError::Spec(format!(
                    "attribute {:?} positive rate must be in (0,1), got {}",
                    a.name, a.positive_rate
                )));
            }
        }
        Ok(())
    }

    /// Eight attributes spanning texture/object/global levels.
    pub fn default_attribute_plan() -> Vec<AttributePlan> {
        let plan = |name: &str, level, rate| AttributePlan {
            name: name.into(),
            level,
            positive_rate: rate,
        };
        vec![
            plan("striped_shirt", AttrLevel::Texture, 0.5),
            plan("checker_pants", AttrLevel::Texture, 0.45),
            plan("dotted_shirt", AttrLevel::Texture, 0.4),
            plan("hat", AttrLevel::Object, 0.5),
            plan("bag", AttrLevel::Object, 0.45),
            plan("badge", AttrLevel::Object, 0.35),
            plan("warm_tint", AttrLevel::Global, 0.5),
            plan("green_cast", AttrLevel::Global, 0.4),
        ]
    }

    /// Default desk-scale attribute-recognition dataset.
    pub fn default_attributes_task(seed: u64) -> SynthSpec {
        SynthSpec {
            train_images: 2000,
            val_images: 250,
            test_images: 250,
            num_identities: 400,
            attributes: Self::default_attribute_plan(),
            width: 64,
            height: 96,
            cameras: 2,
            jitter: JitterSpec::default(),
            seed,
        }
    }

    /// Default desk-scale re-identification dataset: 100 identities, 2 cameras.
    pub fn default_reid_task(seed: u64) -> SynthSpec {
        SynthSpec {
            train_images: 1600,
            val_images: 200,
            test_images: 200,
            num_identities: 100,
            attributes: Self::default_attribute_plan(),
            width: 64,
            height: 96,
            cameras: 2,
            jitter: JitterSpec::default(),
            seed,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn sub_rng(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (tag << 48) ^ splitmix64(idx)))
}

#[derive(Clone)]
struct IdentityParams {
    shirt: [f64; 3],
    pants: [f64; 3],
    skin: [f64; 3],
    hat_color: [f64; 3],
    bag_color: [f64; 3],
    bag_on_left: bool,
    torso_w: f64,
    torso_h: f64,
    attrs: Vec<u8>,
}

fn saturated_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // one dominant channel so identities are well separated in color space
    let dominant = rng.gen_range(0..3usize);
    let mut c = [0.0; 3];
    for (i, v) in c.iter_mut().enumerate() {
        *v = if i == dominant {
            rng.gen_range(0.55..0.95)
        } else {
            rng.gen_range(0.05..0.45)
        };
    }
    c
}

fn identity_params(spec: &SynthSpec, id: u32) -> IdentityParams {
    let mut rng = sub_rng(spec.seed, 1, id as u64);
    let shirt = saturated_color(&mut rng);
    let pants = saturated_color(&mut rng);
    let skin_base = rng.gen_range(0.45..0.85);
    let skin = [skin_base, skin_base * 0.82, skin_base * 0.66];
    let hat_color = if rng.gen_bool(0.5) {
        [0.05, 0.05, rng.gen_range(0.05..0.25)]
    } else {
        [rng.gen_range(0.75..0.95), rng.gen_range(0.75..0.95), 0.1]
    };
    let bag_color = saturated_color(&mut rng);
    let bag_on_left = rng.gen_bool(0.5);
    let torso_w = rng.gen_range(0.85..1.15);
    let torso_h = rng.gen_range(0.9..1.1);
    let attrs = spec
        .attributes
        .iter()
        .map(|a| u8::from(rng.gen::<f64>() < a.positive_rate))
        .collect();
    IdentityParams {
        shirt,
        pants,
        skin,
        hat_color,
        bag_color,
        bag_on_left,
        torso_w,
        torso_h,
        attrs,
    }
}

struct Frame<'a> {
    w: usize,
    h: usize,
    px: &'a mut [f64],
}

impl Frame<'_> {
    fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [f64; 3]) {
        let xa = (x0.max(0.0) as usize).min(self.w);
        let xb = (x1.max(0.0).ceil() as usize).min(self.w);
        let ya = (y0.max(0.0) as usize).min(self.h);
        let yb = (y1.max(0.0).ceil() as usize).min(self.h);
        for y in ya..yb {
            for x in xa..xb {
                let p = (y * self.w + x) * 3;
                self.px[p..p + 3].copy_from_slice(&color);
            }
        }
    }

    fn fill_circle(&mut self, cx: f64, cy: f64, r: f64, color: [f64; 3]) {
        let xa = ((cx - r).max(0.0) as usize).min(self.w);
        let xb = ((cx + r).max(0.0).ceil() as usize).min(self.w);
        let ya = ((cy - r).max(0.0) as usize).min(self.h);
        let yb = ((cy + r).max(0.0).ceil() as usize).min(self.h);
        for y in ya..yb {
            for x in xa..xb {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    let p = (y * self.w + x) * 3;
                    self.px[p..p + 3].copy_from_slice(&color);
                }
            }
        }
    }
}

fn scale3(c: [f64; 3], s: f64) -> [f64; 3] {
    [c[0] * s, c[1] * s, c[2] * s]
}

struct AttrIdx {
    striped: Option<usize>,
    checker: Option<usize>,
    dotted: Option<usize>,
    hat: Option<usize>,
    bag: Option<usize>,
    badge: Option<usize>,
    warm: Option<usize>,
    green: Option<usize>,
}

impl AttrIdx {
    fn from_plan(plan: &[AttributePlan]) -> AttrIdx {
        let find = |n: &str| plan.iter().position(|a| a.name == n);
        AttrIdx {
            striped: find("striped_shirt"),
            checker: find("checker_pants"),
            dotted: find("dotted_shirt"),
            hat: find("hat"),
            bag: find("bag"),
            badge: find("badge"),
            warm: find("warm_tint"),
            green: find("green_cast"),
        }
    }
}

fn has(attrs: &[u8], idx: Option<usize>) -> bool {
    idx.map(|i| attrs[i] == 1).unwrap_or(false)
}

#[allow(clippy::too_many_arguments)]
fn render_image(
    spec: &SynthSpec,
    ident: &IdentityParams,
    camera: u32,
    scene: u32,
    attr_idx: &AttrIdx,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (w as f64, h as f64);
    let mut px = vec![0.0f64; w * h * 3];

    // background: scene base color with a per-camera shift
    let mut srng = sub_rng(spec.seed, 2, (scene as u64) << 8 | camera as u64);
    let bg = [
        srng.gen_range(0.25..0.65),
        srng.gen_range(0.25..0.65),
        srng.gen_range(0.25..0.65),
    ];
    for p in px.chunks_mut(3) {
        p.copy_from_slice(&bg);
    }
    let mut frame = Frame { w, h, px: &mut px };

    // camera jitter: scale and offset of the whole figure
    let cj = spec.jitter.crop;
    let s = 1.0 + rng.gen_range(-cj..=cj);
    let dx = rng.gen_range(-cj..=cj) * wf;
    let dy = rng.gen_range(-cj..=cj) * hf * 0.5;
    let tx = |x: f64| (x - 0.5 * wf) * s + 0.5 * wf + dx;
    let ty = |y: f64| (y - 0.5 * hf) * s + 0.5 * hf + dy;

    let attrs = &ident.attrs;

    // legs
    let leg_top = ty(0.58 * hf);
    let leg_bot = ty(0.92 * hf);
    let legs = [
        (tx(0.34 * wf), tx(0.48 * wf)),
        (tx(0.52 * wf), tx(0.66 * wf)),
    ];
    for (la, lb) in legs {
        frame.fill_rect(la, leg_top, lb, leg_bot, ident.pants);
    }
    if has(attrs, attr_idx.checker) {
        let dark = scale3(ident.pants, 0.4);
        let cell = (3.0 * s).max(1.0);
        for (la, lb) in legs {
            let xa = la.max(0.0) as usize;
            let xb = (lb.ceil().max(0.0) as usize).min(w);
            let ya = leg_top.max(0.0) as usize;
            let yb = (leg_bot.ceil().max(0.0) as usize).min(h);
            for y in ya..yb {
                for x in xa..xb.min(w) {
                    if ((x as f64 / cell) as usize + (y as f64 / cell) as usize) % 2 == 0 {
                        let p = (y * w + x) * 3;
                        frame.px[p..p + 3].copy_from_slice(&dark);
                    }
                }
            }
        }
    }

    // torso
    let half_tw = 0.2 * wf * ident.torso_w * s;
    let torso_x0 = tx(0.5 * wf) - half_tw;
    let torso_x1 = tx(0.5 * wf) + half_tw;
    let torso_y0 = ty(0.26 * hf);
    let torso_y1 = ty((0.26 + 0.32 * ident.torso_h) * hf);
    frame.fill_rect(torso_x0, torso_y0, torso_x1, torso_y1, ident.shirt);
    if has(attrs, attr_idx.striped) {
        let dark = scale3(ident.shirt, 0.45);
        let stripe = (3.0 * s).max(1.0);
        let ya = torso_y0.max(0.0) as usize;
        let yb = (torso_y1.ceil().max(0.0) as usize).min(h);
        let xa = torso_x0.max(0.0) as usize;
        let xb = (torso_x1.ceil().max(0.0) as usize).min(w);
        for y in ya..yb {
            if (((y as f64 - torso_y0) / stripe) as usize) % 2 == 0 {
                for x in xa..xb {
                    let p = (y * w + x) * 3;
                    frame.px[p..p + 3].copy_from_slice(&dark);
                }
            }
        }
    }
    if has(attrs, attr_idx.dotted) {
        let light = [
            (ident.shirt[0] + 0.5).min(1.0),
            (ident.shirt[1] + 0.5).min(1.0),
            (ident.shirt[2] + 0.5).min(1.0),
        ];
        let cell = (6.0 * s).max(2.0) as usize;
        let ya = torso_y0.max(0.0) as usize;
        let yb = (torso_y1.ceil().max(0.0) as usize).min(h);
        let xa = torso_x0.max(0.0) as usize;
        let xb = (torso_x1.ceil().max(0.0) as usize).min(w);
        for y in ya..yb {
            for x in xa..xb {
                if x % cell < 2 && y % cell < 2 {
                    let p = (y * w + x) * 3;
                    frame.px[p..p + 3].copy_from_slice(&light);
                }
            }
        }
    }

    // head
    let head_cx = tx(0.5 * wf);
    let head_cy = ty(0.16 * hf);
    let head_r = 0.085 * hf * s;
    frame.fill_circle(head_cx, head_cy, head_r, ident.skin);

    // object attributes: small high-contrast blobs at body zones
    if has(attrs, attr_idx.hat) {
        frame.fill_rect(
            head_cx - 1.3 * head_r,
            head_cy - 1.7 * head_r,
            head_cx + 1.3 * head_r,
            head_cy - 0.6 * head_r,
            ident.hat_color,
        );
    }
    if has(attrs, attr_idx.bag) {
        let side = if ident.bag_on_left { -1.0 } else { 1.0 };
        let bx = tx(0.5 * wf) + side * (half_tw + 0.06 * wf * s);
        let by = ty(0.52 * hf);
        frame.fill_rect(
            bx - 0.05 * wf * s,
            by - 0.05 * hf * s,
            bx + 0.05 * wf * s,
            by + 0.05 * hf * s,
            ident.bag_color,
        );
    }
    if has(attrs, attr_idx.badge) {
        // zone position jitters per image so raw-pixel probes stay near chance
        let jx = rng.gen_range(-0.3..=0.3) * half_tw;
        let jy = rng.gen_range(-0.25..=0.25) * (torso_y1 - torso_y0);
        let bx = head_cx + jx;
        let by = 0.5 * (torso_y0 + torso_y1) + jy;
        let r = 0.035 * hf * s;
        frame.fill_rect(bx - r, by - r, bx + r, by + r, [0.98, 0.9, 0.05]);
    }

    // global attributes: whole-image tints
    if has(attrs, attr_idx.warm) {
        for p in frame.px.chunks_mut(3) {
            p[0] = (p[0] * 1.22).min(1.0);
            p[1] *= 0.96;
            p[2] *= 0.78;
        }
    }
    if has(attrs, attr_idx.green) {
        for p in frame.px.chunks_mut(3) {
            p[0] *= 0.84;
            p[1] = (p[1] * 1.18).min(1.0);
            p[2] *= 0.84;
        }
    }

    // camera jitter: brightness and additive gaussian noise
    let bj = spec.jitter.brightness;
    let bright = 1.0 + rng.gen_range(-bj..=bj);
    let sigma = spec.jitter.noise;
    let mut out = vec![0u8; w * h * 3];
    let mut i = 0;
    while i < px.len() {
        // Box-Muller; two values per draw
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen::<f64>();
        let mag = (-2.0 * u1.ln()).sqrt();
        let n0 = mag * (2.0 * std::f64::consts::PI * u2).cos();
        let n1 = mag * (2.0 * std::f64::consts::PI * u2).sin();
        for (k, nz) in [(0usize, n0), (1usize, n1)] {
            if i + k < px.len() {
                let v = (px[i + k] * bright + sigma * nz).clamp(0.0, 1.0);
                out[i + k] = (v * 255.0).round() as u8;
            }
        }
        i += 2;
    }
    out
}

/// One rendered sample, before hitting disk.
pub struct RenderedSample {
    pub record: SampleRecord,
    pub ppm_bytes: Vec<u8>,
}

/// Deterministically render every image of the spec.
pub fn render_dataset(spec: &SynthSpec) -> Result<Vec<RenderedSample>> {
    spec.validate()?;
    let attr_idx = AttrIdx::from_plan(&spec.attributes);
    let identities: Vec<IdentityParams> = (0..spec.num_identities as u32)
        .map(|id| identity_params(spec, id))
        .collect();
    let total = spec.total_images();
    let samples: Vec<RenderedSample> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let id = (idx % spec.num_identities) as u32;
            let camera = ((idx / spec.num_identities) as u32) % spec.cameras;
            let tracklet = id * spec.cameras + camera;
            let scene = (id.wrapping_mul(31).wrapping_add(camera * 7)) % 40;
            let ident = &identities[id as usize];
            let mut rng = sub_rng(spec.seed, 3, idx as u64);
            let rgb = render_image(spec, ident, camera, scene, &attr_idx, &mut rng);
            let record = SampleRecord {
                path: format!("images/img_{idx:05}.ppm"),
                attrs: ident.attrs.clone(),
                id,
                tracklet,
                camera,
                scene,
                w: spec.width as u32,
                h: spec.height as u32,
            };
            RenderedSample {
                record,
                ppm_bytes: ppm::encode_ppm(spec.width, spec.height, &rgb),
            }
        })
        .collect();
    Ok(samples)
}

/// Render the dataset and write images plus `manifest.jsonl` under `out_dir`.
/// The manifest is written last, so a failed run leaves no manifest behind.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    let samples = render_dataset(spec)?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    for s in &samples {
        super::atomic_write(&out_dir.join(&s.record.path), &s.ppm_bytes)?;
    }
    let manifest = Manifest {
        attributes: spec.attributes.iter().map(|a| a.name.clone()).collect(),
        records: samples.into_iter().map(|s| s.record).collect(),
    };
    super::manifest::write_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
