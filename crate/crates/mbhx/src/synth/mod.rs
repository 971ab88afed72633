//! Procedural motion-blurred hand samples with analytically exact
//! ground-truth alpha and foreground.
//!
//! A [`Sprite`] is a hand-like shape — an ellipse palm plus five capsule
//! fingers — carrying a smooth color field (base skin tone plus
//! low-frequency shading). A [`Trajectory`] moves it across the frame;
//! temporal blur is the uniform average of `N` subframe coverage masks,
//! each anti-aliased by 4x4 binary subpixel sampling. That makes the
//! ground truth exact by construction:
//!
//! - `alpha(p)` is the mean over subframes of the subpixel coverage
//!   fraction at `p`;
//! - `F(p)` is the coverage-weighted mean sprite color where covered, and
//!   the nearest covered pixel's color (4-neighbor BFS, row-major seed
//!   order) where `alpha = 0`, so full-image losses stay well defined.
//!
//! Everything is a pure function of the seed: same seed, same bytes.

mod dataset;

pub use dataset::{generate_dataset, load_dataset_split, LoadedSample, Split};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::compositing::{composite, ImageBuffer};
use crate::error::{Error, Result};

/// Rigid pose: translation of the sprite origin into image coordinates
/// plus rotation about the sprite origin, radians, counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub translation: (f64, f64),
    pub rotation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Linear,
    /// Time-squared easing: the pose parameter is `t^2`, modelling an
    /// accelerating hand. The swept path is the same segment as `Linear`.
    Quadratic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub start: Pose,
    pub end: Pose,
    /// Number of temporal subframes; 1 yields a sharp sprite.
    pub subframes: usize,
}

impl Trajectory {
    /// Pose of subframe `i` of `self.subframes`.
    pub fn pose(&self, i: usize) -> Pose {
        let t = if self.subframes <= 1 {
            0.0
        } else {
            i as f64 / (self.subframes - 1) as f64
        };
        let s = match self.kind {
            TrajectoryKind::Linear => t,
            TrajectoryKind::Quadratic => t * t,
        };
        Pose {
            translation: (
                self.start.translation.0 + s * (self.end.translation.0 - self.start.translation.0),
                self.start.translation.1 + s * (self.end.translation.1 - self.start.translation.1),
            ),
            rotation: self.start.rotation + s * (self.end.rotation - self.start.rotation),
        }
    }
}

/// One finger: a capsule (segment endpoints plus radius) in sprite-local
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub radius: f64,
}

impl Capsule {
    fn contains(&self, q: (f64, f64)) -> bool {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq == 0.0 {
            0.0
        } else {
            (((q.0 - self.a.0) * dx + (q.1 - self.a.1) * dy) / len_sq).clamp(0.0, 1.0)
        };
        let (px, py) = (self.a.0 + t * dx, self.a.1 + t * dy);
        let (ex, ey) = (q.0 - px, q.1 - py);
        ex * ex + ey * ey <= self.radius * self.radius
    }

    fn bound(&self) -> f64 {
        let na = (self.a.0 * self.a.0 + self.a.1 * self.a.1).sqrt();
        let nb = (self.b.0 * self.b.0 + self.b.1 * self.b.1).sqrt();
        na.max(nb) + self.radius
    }
}

/// Smooth sprite coloring: a base skin tone plus a low-frequency additive
/// shading term, bounded so every value stays in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorField {
    pub base: [f64; 3],
    pub shade_amplitude: f64,
    pub frequency: (f64, f64),
    pub phase: (f64, f64),
}

impl ColorField {
    /// Color at sprite-local point `q`.
    pub fn color_at(&self, q: (f64, f64)) -> [f64; 3] {
        let shade = self.shade_amplitude
            * (self.frequency.0 * q.0 + self.phase.0).sin()
            * (self.frequency.1 * q.1 + self.phase.1).sin();
        [
            self.base[0] + shade,
            self.base[1] + shade,
            self.base[2] + shade,
        ]
    }
}

/// Hand-like sprite in continuous sprite-local coordinates with the palm
/// ellipse centered on the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub palm_radii: (f64, f64),
    pub fingers: Vec<Capsule>,
    pub color: ColorField,
}

impl Sprite {
    fn contains_local(&self, q: (f64, f64)) -> bool {
        let (rx, ry) = self.palm_radii;
        let e = (q.0 / rx) * (q.0 / rx) + (q.1 / ry) * (q.1 / ry);
        if e <= 1.0 {
            return true;
        }
        self.fingers.iter().any(|f| f.contains(q))
    }

    /// Binary inside test for an image-space point under `pose`.
    pub fn contains_image_point(&self, pose: &Pose, p: (f64, f64)) -> bool {
        self.contains_local(to_local(pose, p))
    }

    /// Sprite color for an image-space point under `pose`.
    pub fn color_at_image_point(&self, pose: &Pose, p: (f64, f64)) -> [f64; 3] {
        self.color.color_at(to_local(pose, p))
    }

    /// Radius of the smallest origin-centered disc containing the sprite;
    /// pose rotations leave it unchanged.
    pub fn bounding_radius(&self) -> f64 {
        let palm = self.palm_radii.0.max(self.palm_radii.1);
        self.fingers
            .iter()
            .map(Capsule::bound)
            .fold(palm, f64::max)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn to_local(pose: &Pose, p: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (p.0 - pose.translation.0, p.1 - pose.translation.1);
    let (sin, cos) = (-pose.rotation).sin_cos();
    (dx * cos - dy * sin, dx * sin + dy * cos)
}

/// Background fill for [`make_sample`].
#[derive(Clone, Debug)]
pub enum BackgroundSource {
    /// Seeded gradients, checkerboards, and smoothed noise.
    Procedural,
    /// 8-bit RGB PNG photos; the sample crops a seeded window, so every
    /// photo must be at least as large as the requested extent.
    Directory(std::path::PathBuf),
}

/// Sprite and trajectory parameters recorded with each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub sprite: Sprite,
    pub trajectory: Trajectory,
}

/// One ground-truth record: observed image plus the exact decomposition
/// it was built from.
#[derive(Clone, Debug)]
pub struct CompositeSample {
    pub image: ImageBuffer,
    pub alpha: ImageBuffer,
    pub foreground: ImageBuffer,
    pub background: ImageBuffer,
    pub seed: u64,
    pub meta: SampleMeta,
}

const SUBPIXEL_GRID: usize = 4;
/// Pixels this close to the frame edge must stay sprite-free.
const GUARD_BAND: f64 = 1.0;

/// Rasterize the motion-blurred sprite: exact alpha and foreground.
pub fn render_blurred(
    sprite: &Sprite,
    trajectory: &Trajectory,
    extent: (usize, usize),
) -> Result<(ImageBuffer, ImageBuffer)> {
    let (height, width) = extent;
    if height == 0 || width == 0 {
        return Err(Error::Contract(format!(
            "extent must be positive, got {height}x{width}"
        )));
    }
    if trajectory.subframes == 0 {
        return Err(Error::Contract("subframes must be at least 1".into()));
    }
    let bound = sprite.bounding_radius();
    for pose in [trajectory.pose(0), trajectory.pose(trajectory.subframes - 1)] {
        let (cx, cy) = pose.translation;
        if cx - bound < GUARD_BAND
            || cy - bound < GUARD_BAND
            || cx + bound > width as f64 - GUARD_BAND
            || cy + bound > height as f64 - GUARD_BAND
        {
            return Err(Error::RejectedSample(format!(
                "sprite (bounding radius {bound:.1}) leaves the guard band at pose ({cx:.1}, {cy:.1}) in a {width}x{height} frame"
            )));
        }
    }

    let n = trajectory.subframes;
    let poses: Vec<Pose> = (0..n).map(|i| trajectory.pose(i)).collect();
    // Subsample positions: one binary sample per cell of the 4x4 grid,
    // jittered within its cell by a per-cell low-discrepancy sequence
    // over the subframes (golden-ratio increments with hashed per-cell
    // phases). Across the N subframes every cell is swept near-uniformly,
    // so even a boundary whose position is static relative to the pixel
    // (an edge parallel to the motion) is measured to O(1/N) rather than
    // the O(1/sqrt(N)) of independent jitter. Deterministic in the
    // subframe and cell indices alone.
    let cells = SUBPIXEL_GRID * SUBPIXEL_GRID;
    let span = 1.0 / SUBPIXEL_GRID as f64;
    let mut offsets = vec![(0.0f64, 0.0f64); n * cells];
    for cell in 0..cells {
        let h = splitmix64(cell as u64 + 1);
        let phase_x = (h >> 32) as f64 / 4_294_967_296.0;
        let phase_y = (h & 0xFFFF_FFFF) as f64 / 4_294_967_296.0;
        let (cx, cy) = (cell % SUBPIXEL_GRID, cell / SUBPIXEL_GRID);
        for i in 0..n {
            let u = (i as f64 * 0.618_033_988_749_894_9 + phase_x).fract();
            let v = (i as f64 * 0.754_877_666_246_692_9 + phase_y).fract();
            offsets[i * cells + cell] = ((cx as f64 + u) * span, (cy as f64 + v) * span);
        }
    }
    let plane = height * width;
    let mut alpha = vec![0.0; plane];
    let mut fg_num = vec![0.0; 3 * plane];
    let mut fg_den = vec![0.0; plane];

    let inv_samples = 1.0 / (SUBPIXEL_GRID * SUBPIXEL_GRID) as f64;
    // Coarse reject distance: pixel centers farther than this from the
    // sprite origin cannot touch it, even at subpixel corners.
    let reject = bound + 1.0;

    for y in 0..height {
        for x in 0..width {
            let center = (x as f64 + 0.5, y as f64 + 0.5);
            let idx = y * width + x;
            let mut covered_sum = 0.0;
            for (i, pose) in poses.iter().enumerate() {
                let (dx, dy) = (center.0 - pose.translation.0, center.1 - pose.translation.1);
                if dx * dx + dy * dy > reject * reject {
                    continue;
                }
                let mut hits = 0usize;
                for &(ox, oy) in &offsets[i * cells..(i + 1) * cells] {
                    let p = (x as f64 + ox, y as f64 + oy);
                    if sprite.contains_image_point(pose, p) {
                        hits += 1;
                    }
                }
                if hits == 0 {
                    continue;
                }
                let m = hits as f64 * inv_samples;
                covered_sum += m;
                let color = sprite.color_at_image_point(pose, center);
                for c in 0..3 {
                    fg_num[c * plane + idx] += m * color[c];
                }
                fg_den[idx] += m;
            }
            alpha[idx] = covered_sum / n as f64;
        }
    }

    // Resolve covered foreground colors, then flood the rest from the
    // nearest covered pixel (4-neighbor BFS seeded in row-major order).
    let mut fg = vec![0.0; 3 * plane];
    let mut queue = std::collections::VecDeque::new();
    let mut visited = vec![false; plane];
    for idx in 0..plane {
        if fg_den[idx] > 0.0 {
            for c in 0..3 {
                fg[c * plane + idx] = (fg_num[c * plane + idx] / fg_den[idx]).clamp(0.0, 1.0);
            }
            visited[idx] = true;
            queue.push_back(idx);
        }
    }
    if queue.is_empty() {
        return Err(Error::RejectedSample(
            "sprite covered no pixels".into(),
        ));
    }
    while let Some(idx) = queue.pop_front() {
        let (y, x) = (idx / width, idx % width);
        let neighbors = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (ny, nx) in neighbors {
            if ny >= height || nx >= width {
                continue;
            }
            let nidx = ny * width + nx;
            if !visited[nidx] {
                visited[nidx] = true;
                for c in 0..3 {
                    fg[c * plane + nidx] = fg[c * plane + idx];
                }
                queue.push_back(nidx);
            }
        }
    }

    Ok((
        ImageBuffer::from_parts(height, width, 1, alpha),
        ImageBuffer::from_parts(height, width, 3, fg),
    ))
}

/// Deterministically draw one complete sample from a 64-bit seed.
///
/// Sprite geometry, skin tone (base red in `[0.42, 0.93]`, green
/// `0.65-0.85` of red, blue `0.75-0.90` of green — pale through deep
/// tones), trajectory, and background all come from the seeded stream.
pub fn make_sample(
    seed: u64,
    extent: (usize, usize),
    background_source: &BackgroundSource,
) -> Result<CompositeSample> {
    let (height, width) = extent;
    if height < 16 || width < 16 {
        return Err(Error::Config(format!(
            "extent must be at least 16x16, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sprite = draw_sprite(&mut rng, extent);
    // Keep the whole swept sprite inside the guard band for any extent.
    let limit = (height.min(width) as f64) / 2.0 - GUARD_BAND - 2.0;
    let bound = sprite.bounding_radius();
    if bound > limit {
        scale_sprite(&mut sprite, limit / bound);
    }
    let trajectory = draw_trajectory(&mut rng, &sprite, extent);
    let background = draw_background(&mut rng, extent, background_source)?;

    let (alpha, foreground) = render_blurred(&sprite, &trajectory, extent)?;
    let image = composite(&foreground, &background, &alpha)?;
    Ok(CompositeSample {
        image,
        alpha,
        foreground,
        background,
        seed,
        meta: SampleMeta { sprite, trajectory },
    })
}

fn draw_sprite(rng: &mut ChaCha8Rng, extent: (usize, usize)) -> Sprite {
    let base = extent.0.min(extent.1) as f64;
    let rx = base * rng.random_range(0.055..0.075);
    let ry = rx * rng.random_range(1.05..1.25);

    // The fan is dense enough that adjacent fingers always overlap: at
    // desk extents an open inter-finger gap would be a sub-pixel sliver,
    // which 4x4 binary subsampling cannot resolve to the fidelity the
    // alpha ground truth promises. Tips of differing lengths keep the
    // silhouette hand-like.
    let spread = rng.random_range(0.45..0.65); // radians across all fingers
    let base_angle = -std::f64::consts::FRAC_PI_2 + rng.random_range(-0.15..0.15);
    let mut fingers = Vec::with_capacity(5);
    for i in 0..5 {
        let angle = base_angle + spread * (i as f64 - 2.0) / 4.0 + rng.random_range(-0.02..0.02);
        let len = ry * rng.random_range(0.75..1.15);
        // Floor the finger thickness near one pixel: hairline capsules
        // alias beyond what 4x4 subsampling can resolve.
        let radius = (rx * rng.random_range(0.30..0.38)).max(1.05);
        let root = 0.82;
        let a = (rx * root * angle.cos(), ry * root * angle.sin());
        let b = (a.0 + len * angle.cos(), a.1 + len * angle.sin());
        fingers.push(Capsule { a, b, radius });
    }

    let red: f64 = rng.random_range(0.42..0.93);
    let green = red * rng.random_range(0.65..0.85);
    let blue = green * rng.random_range(0.75..0.90);
    let base_color = [red, green, blue];
    let headroom = (1.0 - red).min(blue).min(0.07);
    let shade_amplitude = headroom * rng.random_range(0.3..1.0);
    let wavelength = base * rng.random_range(1.2..2.5);
    let frequency = (
        std::f64::consts::TAU / wavelength,
        std::f64::consts::TAU / (wavelength * rng.random_range(0.8..1.2)),
    );
    let phase = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );

    Sprite {
        palm_radii: (rx, ry),
        fingers,
        color: ColorField {
            base: base_color,
            shade_amplitude,
            frequency,
            phase,
        },
    }
}

fn scale_sprite(sprite: &mut Sprite, factor: f64) {
    sprite.palm_radii.0 *= factor;
    sprite.palm_radii.1 *= factor;
    for f in &mut sprite.fingers {
        f.a = (f.a.0 * factor, f.a.1 * factor);
        f.b = (f.b.0 * factor, f.b.1 * factor);
        f.radius *= factor;
    }
}

fn draw_trajectory(rng: &mut ChaCha8Rng, sprite: &Sprite, extent: (usize, usize)) -> Trajectory {
    let (height, width) = (extent.0 as f64, extent.1 as f64);
    let bound = sprite.bounding_radius();
    let (lo_x, hi_x) = (bound + GUARD_BAND + 0.5, width - bound - GUARD_BAND - 0.5);
    let (lo_y, hi_y) = (bound + GUARD_BAND + 0.5, height - bound - GUARD_BAND - 0.5);

    let start = (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
    // At least ~2.5 px of travel: the edge of a near-static sprite sits
    // inside one subpixel sampling period for every subframe, and no
    // 16-sample estimate of it can meet the alpha fidelity bound. Actual
    // motion dithers the edge across periods and the temporal average
    // converges.
    let length = rng.random_range(2.5..0.25 * width.min(height));
    let direction = rng.random_range(0.0..std::f64::consts::TAU);
    let mut dir = (direction.cos(), direction.sin());
    // Longest travel from `start` along `dir` that stays in the box;
    // flipping the direction always leaves room for the minimum length.
    let reach = |dir: (f64, f64)| -> f64 {
        let axis = |p: f64, d: f64, lo: f64, hi: f64| {
            if d > 0.0 {
                (hi - p) / d
            } else if d < 0.0 {
                (lo - p) / d
            } else {
                f64::INFINITY
            }
        };
        axis(start.0, dir.0, lo_x, hi_x).min(axis(start.1, dir.1, lo_y, hi_y))
    };
    if reach(dir) < length {
        let flipped = (-dir.0, -dir.1);
        if reach(flipped) > reach(dir) {
            dir = flipped;
        }
    }
    let travel = length.min(reach(dir));
    let end = (start.0 + travel * dir.0, start.1 + travel * dir.1);

    let rot_start = rng.random_range(-0.2..0.2);
    let rot_end = rot_start + rng.random_range(-0.25..0.25);
    let kind = if rng.random_bool(0.5) {
        TrajectoryKind::Linear
    } else {
        TrajectoryKind::Quadratic
    };
    Trajectory {
        kind,
        start: Pose {
            translation: start,
            rotation: rot_start,
        },
        end: Pose {
            translation: end,
            rotation: rot_end,
        },
        // Twice the type's default: generated ground truth carries the
        // alpha-fidelity bound, and per-pixel sampling error shrinks
        // with the subframe count.
        subframes: 64,
    }
}

fn draw_background(
    rng: &mut ChaCha8Rng,
    extent: (usize, usize),
    source: &BackgroundSource,
) -> Result<ImageBuffer> {
    match source {
        BackgroundSource::Procedural => Ok(procedural_background(rng, extent)),
        BackgroundSource::Directory(dir) => background_from_directory(rng, extent, dir),
    }
}

fn procedural_background(rng: &mut ChaCha8Rng, extent: (usize, usize)) -> ImageBuffer {
    let (height, width) = extent;
    let plane = height * width;
    let mut data = vec![0.0; 3 * plane];
    match rng.random_range(0..3u32) {
        // Linear gradient between two colors along a random direction.
        0 => {
            let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let diag = ((width * width + height * height) as f64).sqrt();
            for y in 0..height {
                for x in 0..width {
                    let t = ((x as f64 * dx + y as f64 * dy) / diag + 0.5).clamp(0.0, 1.0);
                    for c in 0..3 {
                        data[c * plane + y * width + x] = c0[c] + t * (c1[c] - c0[c]);
                    }
                }
            }
        }
        // Checkerboard.
        1 => {
            let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let cell = rng.random_range(4..=16usize);
            for y in 0..height {
                for x in 0..width {
                    let pick = ((x / cell) + (y / cell)) % 2 == 0;
                    for c in 0..3 {
                        data[c * plane + y * width + x] = if pick { c0[c] } else { c1[c] };
                    }
                }
            }
        }
        // Smoothed noise: a few low-frequency sine products per channel.
        _ => {
            for c in 0..3 {
                let mean = rng.random_range(0.3..0.7);
                let mut waves = Vec::new();
                for _ in 0..3 {
                    waves.push((
                        rng.random_range(0.02..0.12),
                        rng.random_range(0.02..0.12),
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.04..0.09),
                    ));
                }
                for y in 0..height {
                    for x in 0..width {
                        let mut v = mean;
                        for &(fx, fy, ph, amp) in &waves {
                            v += amp * (fx * x as f64 + fy * y as f64 + ph).sin();
                        }
                        data[c * plane + y * width + x] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    ImageBuffer::from_parts(height, width, 3, data)
}

fn background_from_directory(
    rng: &mut ChaCha8Rng,
    extent: (usize, usize),
    dir: &std::path::Path,
) -> Result<ImageBuffer> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .png backgrounds"),
        ));
    }
    let path = &entries[rng.random_range(0..entries.len())];
    let photo = crate::io::read_image(path)?;
    let (height, width) = extent;
    if photo.height() < height || photo.width() < width {
        return Err(Error::Config(format!(
            "background {} is {}x{}, smaller than requested {height}x{width}",
            path.display(),
            photo.height(),
            photo.width()
        )));
    }
    let oy = rng.random_range(0..=photo.height() - height);
    let ox = rng.random_range(0..=photo.width() - width);
    let plane = height * width;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                data[c * plane + y * width + x] = photo.get(oy + y, ox + x, c);
            }
        }
    }
    Ok(ImageBuffer::from_parts(height, width, 3, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_sprite() -> Sprite {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        draw_sprite(&mut rng, (64, 64))
    }

    fn static_trajectory(center: (f64, f64), subframes: usize) -> Trajectory {
        let pose = Pose {
            translation: center,
            rotation: 0.0,
        };
        Trajectory {
            kind: TrajectoryKind::Linear,
            start: pose,
            end: pose,
            subframes,
        }
    }

    #[test]
    fn sharp_sample_alpha_is_near_binary() {
        let sprite = test_sprite();
        let (alpha, _) = render_blurred(&sprite, &static_trajectory((32.0, 36.0), 1), (64, 64)).unwrap();
        let interior = alpha
            .data()
            .iter()
            .filter(|&&a| a > 0.05 && a < 0.95)
            .count();
        let frac = interior as f64 / alpha.data().len() as f64;
        assert!(frac <= 0.02, "{:.3}% of pixels are fractional", frac * 100.0);
        assert!(alpha.data().iter().any(|&a| a == 1.0));
        assert!(alpha.data().iter().any(|&a| a == 0.0));
    }

    #[test]
    fn constant_color_sprite_has_constant_foreground_over_coverage() {
        let mut sprite = test_sprite();
        sprite.color.shade_amplitude = 0.0;
        let traj = Trajectory {
            kind: TrajectoryKind::Linear,
            start: Pose {
                translation: (24.0, 32.0),
                rotation: 0.1,
            },
            end: Pose {
                translation: (40.0, 32.0),
                rotation: -0.1,
            },
            subframes: 16,
        };
        let (alpha, fg) = render_blurred(&sprite, &traj, (64, 64)).unwrap();
        let base = sprite.color.base;
        for idx in 0..64 * 64 {
            if alpha.data()[idx] > 0.0 {
                for c in 0..3 {
                    let v = fg.get(idx / 64, idx % 64, c);
                    assert!((v - base[c]).abs() < 1e-12, "channel {c}: {v} vs {}", base[c]);
                }
            }
        }
    }

    /// Oracle: re-rasterize probe pixels with a 16x finer subpixel grid
    /// (256 samples per pixel per subframe) and compare alpha.
    #[test]
    fn alpha_matches_16x_supersampled_rasterization() {
        let sprite = test_sprite();
        let traj = Trajectory {
            kind: TrajectoryKind::Quadratic,
            start: Pose {
                translation: (26.0, 30.0),
                rotation: -0.1,
            },
            end: Pose {
                translation: (38.0, 34.0),
                rotation: 0.15,
            },
            subframes: 32,
        };
        let (alpha, _) = render_blurred(&sprite, &traj, (64, 64)).unwrap();
        let poses: Vec<Pose> = (0..traj.subframes).map(|i| traj.pose(i)).collect();
        let mut max_diff = 0.0f64;
        for y in (0..64).step_by(2) {
            for x in (0..64).step_by(2) {
                let mut sum = 0.0;
                for pose in &poses {
                    let mut hits = 0usize;
                    for sy in 0..16 {
                        for sx in 0..16 {
                            let p = (
                                x as f64 + (sx as f64 + 0.5) / 16.0,
                                y as f64 + (sy as f64 + 0.5) / 16.0,
                            );
                            if sprite.contains_image_point(pose, p) {
                                hits += 1;
                            }
                        }
                    }
                    sum += hits as f64 / 256.0;
                }
                let oracle = sum / poses.len() as f64;
                max_diff = max_diff.max((alpha.get(y, x, 0) - oracle).abs());
            }
        }
        assert!(max_diff < 2e-2, "max probe diff {max_diff}");
    }

    #[test]
    fn guard_band_violation_is_rejected() {
        let sprite = test_sprite();
        let err = render_blurred(&sprite, &static_trajectory((3.0, 32.0), 4), (64, 64)).unwrap_err();
        assert!(matches!(err, Error::RejectedSample(_)));
    }

    #[test]
    fn same_seed_bit_identical_samples() {
        let a = make_sample(99, (64, 64), &BackgroundSource::Procedural).unwrap();
        let b = make_sample(99, (64, 64), &BackgroundSource::Procedural).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.foreground, b.foreground);
        assert_eq!(a.background, b.background);
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn adjacent_seeds_differ() {
        let a = make_sample(7, (64, 64), &BackgroundSource::Procedural).unwrap();
        let b = make_sample(8, (64, 64), &BackgroundSource::Procedural).unwrap();
        assert_ne!(a.meta, b.meta);
    }

    #[test]
    fn image_reconstructs_from_ground_truth() {
        for seed in [1u64, 2, 3, 4, 5] {
            let s = make_sample(seed, (64, 64), &BackgroundSource::Procedural).unwrap();
            let rebuilt = composite(&s.foreground, &s.background, &s.alpha).unwrap();
            let max_err = s
                .image
                .data()
                .iter()
                .zip(rebuilt.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-6, "seed {seed}: max err {max_err}");
        }
    }

    /// Lengthening the translation can only shrink (or keep) the fully
    /// opaque region.
    #[test]
    fn opaque_area_shrinks_as_blur_grows()  {
        for seed in [11u64, 42, 1357] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sprite = draw_sprite(&mut rng, (64, 64));
            let start = Pose {
                translation: (22.0, 32.0),
                rotation: 0.0,
            };
            let mut last_area = usize::MAX;
            for length in [0.0, 2.0, 5.0, 10.0, 18.0] {
                let traj = Trajectory {
                    kind: TrajectoryKind::Linear,
                    start,
                    end: Pose {
                        translation: (start.translation.0 + length, start.translation.1),
                        rotation: 0.0,
                    },
                    subframes: 32,
                };
                let (alpha, _) = render_blurred(&sprite, &traj, (64, 64)).unwrap();
                let area = alpha.data().iter().filter(|&&a| a >= 1.0).count();
                assert!(
                    area <= last_area,
                    "seed {seed}: opaque area grew from {last_area} to {area} at length {length}"
                );
                last_area = area;
            }
            assert!(last_area < usize::MAX);
        }
    }

    #[test]
    fn too_small_extent_is_config_error() {
        assert!(matches!(
            make_sample(1, (8, 8), &BackgroundSource::Procedural),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_background_directory_is_io_error() {
        let err = make_sample(
            1,
            (64, 64),
            &BackgroundSource::Directory("/definitely/not/here".into()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
