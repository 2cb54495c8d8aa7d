use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{norm, Point3, PointCloud};
use crate::{Error, Result};

pub const GROUND: u32 = 0;
pub const POLE: u32 = 1;
pub const BOX: u32 = 2;
pub const WALL: u32 = 3;

/// Names of the synthetic classes, indexed by label.
pub const CLASS_NAMES: [&str; 4] = ["ground", "pole", "box", "wall"];

/// Mean intensity per class before noise.
const INTENSITY: [f64; 4] = [0.25, 0.55, 0.75, 0.4];

/// Labelled toy scene: a square ground patch with vertical poles, boxes
/// resting on the ground and thin vertical walls.
///
/// Ground is class 0, poles 1, boxes 2 and walls 3. Features follow the
/// scan layout `[intensity, range]`, with a class-dependent mean intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Side of the ground square centred on the origin (metres).
    pub extent: f64,
    pub ground_points: usize,
    pub poles: usize,
    pub pole_points: usize,
    pub pole_radius: f64,
    pub pole_height: f64,
    pub boxes: usize,
    pub box_points: usize,
    pub box_size: f64,
    pub walls: usize,
    pub wall_points: usize,
    pub wall_length: f64,
    pub wall_height: f64,
    /// Standard deviation of the positional jitter.
    pub noise_sigma: f64,
    /// Standard deviation of the intensity noise.
    pub intensity_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::plane_and_poles(0)
    }
}

impl SceneSpec {
    /// Two classes, about 3000 points: ground and six poles.
    pub fn plane_and_poles(seed: u64) -> Self {
        SceneSpec {
            extent: 4.0,
            ground_points: 2400,
            poles: 6,
            pole_points: 100,
            pole_radius: 0.08,
            pole_height: 1.5,
            boxes: 0,
            box_points: 0,
            box_size: 0.5,
            walls: 0,
            wall_points: 0,
            wall_length: 1.5,
            wall_height: 1.0,
            noise_sigma: 0.01,
            intensity_noise: 0.1,
            seed,
        }
    }

    /// Three classes meeting along sharp edges: ground, poles and boxes, with
    /// intensities noisy enough that geometry matters near boundaries.
    pub fn boundary(seed: u64) -> Self {
        SceneSpec {
            ground_points: 2000,
            poles: 4,
            pole_points: 100,
            boxes: 4,
            box_points: 180,
            box_size: 0.5,
            intensity_noise: 0.2,
            ..SceneSpec::plane_and_poles(seed)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_points(&self) -> usize {
        self.ground_points
            + self.poles * self.pole_points
            + self.boxes * self.box_points
            + self.walls * self.wall_points
    }

    /// One more than the largest class id the spec can emit.
    pub fn n_classes(&self) -> usize {
        if self.walls > 0 && self.wall_points > 0 {
            4
        } else if self.boxes > 0 && self.box_points > 0 {
            3
        } else {
            2
        }
    }

    fn validate(&self) -> Result<()> {
        if self.total_points() == 0 {
            return Err(Error::invalid("generate_scene", "spec emits no points"));
        }
        let positive = [
            ("extent", self.extent),
            ("pole_radius", self.pole_radius),
            ("pole_height", self.pole_height),
            ("box_size", self.box_size),
            ("wall_length", self.wall_length),
            ("wall_height", self.wall_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("generate_scene", format!("{name} must be positive")));
            }
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("intensity_noise", self.intensity_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("generate_scene", format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Horizontal footprint used to keep objects apart and to clear ground.
#[derive(Clone, Copy, Debug)]
enum Object {
    Pole { c: [f64; 2] },
    Box { c: [f64; 2] },
    Wall { c: [f64; 2], dir: [f64; 2] },
}

impl Object {
    fn reach(&self, spec: &SceneSpec) -> f64 {
        match self {
            Object::Pole { .. } => spec.pole_radius,
            Object::Box { .. } => spec.box_size * std::f64::consts::FRAC_1_SQRT_2,
            Object::Wall { .. } => spec.wall_length / 2.0,
        }
    }

    fn center(&self) -> [f64; 2] {
        match *self {
            Object::Pole { c } | Object::Box { c } | Object::Wall { c, .. } => c,
        }
    }

    /// Whether a ground sample at `(x, y)` lies under or against the object.
    fn clears(&self, spec: &SceneSpec, x: f64, y: f64, margin: f64) -> bool {
        match *self {
            Object::Pole { c } => {
                ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt() > spec.pole_radius + margin
            }
            Object::Box { c } => {
                let h = spec.box_size / 2.0 + margin;
                (x - c[0]).abs() > h || (y - c[1]).abs() > h
            }
            Object::Wall { c, dir } => {
                let (dx, dy) = (x - c[0], y - c[1]);
                let along = dx * dir[0] + dy * dir[1];
                let across = -dx * dir[1] + dy * dir[0];
                along.abs() > spec.wall_length / 2.0 + margin || across.abs() > margin
            }
        }
    }
}

fn place(rng: &mut ChaCha8Rng, spec: &SceneSpec, placed: &[Object], make: impl Fn(&mut ChaCha8Rng, [f64; 2]) -> Object) -> Object {
    let half = spec.extent / 2.0;
    let mut last = make(rng, [0.0, 0.0]);
    for _ in 0..200 {
        let margin = last.reach(spec) + 0.1;
        let lo = -half + margin;
        let hi = (half - margin).max(lo + 1e-9);
        let c = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let cand = make(rng, c);
        let ok = placed.iter().all(|o| {
            let (a, b) = (o.center(), cand.center());
            let gap = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            gap > o.reach(spec) + cand.reach(spec) + 0.25
        });
        last = cand;
        if ok {
            break;
        }
    }
    last
}

/// Deterministic labelled scene for `spec` (same spec, same bits).
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut objects = Vec::new();
    for _ in 0..spec.poles {
        let o = place(&mut rng, spec, &objects, |_, c| Object::Pole { c });
        objects.push(o);
    }
    for _ in 0..spec.boxes {
        let o = place(&mut rng, spec, &objects, |_, c| Object::Box { c });
        objects.push(o);
    }
    for _ in 0..spec.walls {
        let o = place(&mut rng, spec, &objects, |r, c| {
            let a: f64 = r.random_range(0.0..std::f64::consts::PI);
            Object::Wall { c, dir: [a.cos(), a.sin()] }
        });
        objects.push(o);
    }

    let mut points: Vec<(Point3, u32)> = Vec::with_capacity(spec.total_points());
    let half = spec.extent / 2.0;
    let clear_margin = 5.0 * spec.noise_sigma;
    let mut tries = 0usize;
    while points.len() < spec.ground_points {
        tries += 1;
        if tries > 1000 * spec.ground_points.max(1) {
            return Err(Error::invalid("generate_scene", "objects leave no room for ground"));
        }
        let (x, y) = (rng.random_range(-half..half), rng.random_range(-half..half));
        if objects.iter().all(|o| o.clears(spec, x, y, clear_margin)) {
            points.push(([x, y, 0.0], GROUND));
        }
    }
    for o in &objects {
        match *o {
            Object::Pole { c } => {
                for _ in 0..spec.pole_points {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let z = rng.random_range(0.0..spec.pole_height);
                    let p = [c[0] + spec.pole_radius * a.cos(), c[1] + spec.pole_radius * a.sin(), z];
                    points.push((p, POLE));
                }
            }
            Object::Box { c } => {
                let s = spec.box_size;
                for _ in 0..spec.box_points {
                    // top face plus four sides, all of area s^2
                    let face = rng.random_range(0..5);
                    let (u, v) = (rng.random_range(-s / 2.0..s / 2.0), rng.random_range(0.0..s));
                    let p = match face {
                        0 => [c[0] + u, c[1] + v - s / 2.0, s],
                        1 => [c[0] - s / 2.0, c[1] + u, v],
                        2 => [c[0] + s / 2.0, c[1] + u, v],
                        3 => [c[0] + u, c[1] - s / 2.0, v],
                        _ => [c[0] + u, c[1] + s / 2.0, v],
                    };
                    points.push((p, BOX));
                }
            }
            Object::Wall { c, dir } => {
                for _ in 0..spec.wall_points {
                    let t = rng.random_range(-spec.wall_length / 2.0..spec.wall_length / 2.0);
                    let z = rng.random_range(0.0..spec.wall_height);
                    points.push(([c[0] + t * dir[0], c[1] + t * dir[1], z], WALL));
                }
            }
        }
    }

    let jitter = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
    let inoise = Normal::new(0.0, spec.intensity_noise).expect("finite sigma");
    for (p, _) in &mut points {
        for v in p.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
    }
    points.shuffle(&mut rng);

    let mut positions = Vec::with_capacity(points.len());
    let mut features = Vec::with_capacity(points.len() * 2);
    let mut labels = Vec::with_capacity(points.len());
    for (p, l) in points {
        features.push(INTENSITY[l as usize] + inoise.sample(&mut rng));
        features.push(norm(&p));
        positions.push(p);
        labels.push(l);
    }
    PointCloud::new(positions, features, 2, Some(labels))
}
