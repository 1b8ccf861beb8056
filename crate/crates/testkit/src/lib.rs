//! Oracles used by the test suites. Nothing here calls into the IoU or AP
//! code it is used to check.

use autolabel_core::geometry::Box3D;
use autolabel_core::labels::{Dataset, Frame, ObjectLabel, RoadType, WeatherCondition};

/// BEV IoU by counting cell centers on an `n x n` grid spanning both boxes'
/// axis-aligned bounds (cell size = larger extent / `n`).
pub fn raster_iou_bev(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let (ax0, ax1, ay0, ay1) = aabb(a);
    let (bx0, bx1, by0, by1) = aabb(b);
    let (x0, x1) = (ax0.min(bx0), ax1.max(bx1));
    let (y0, y1) = (ay0.min(by0), ay1.max(by1));
    let cell = (x1 - x0).max(y1 - y0) / n as f64;
    let nx = ((x1 - x0) / cell).ceil() as usize;
    let ny = ((y1 - y0) / cell).ceil() as usize;

    let la = Local::new(a);
    let lb = Local::new(b);
    let (mut inter, mut union) = (0u64, 0u64);
    for j in 0..ny {
        let y = y0 + (j as f64 + 0.5) * cell;
        for i in 0..nx {
            let x = x0 + (i as f64 + 0.5) * cell;
            let ina = la.contains(x, y);
            let inb = lb.contains(x, y);
            inter += u64::from(ina && inb);
            union += u64::from(ina || inb);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

struct Local {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    hl: f64,
    hw: f64,
}

impl Local {
    fn new(b: &Box3D) -> Self {
        Self {
            cx: b.cx(),
            cy: b.cy(),
            cos: b.yaw().cos(),
            sin: b.yaw().sin(),
            hl: b.length() / 2.0,
            hw: b.width() / 2.0,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        u.abs() <= self.hl && v.abs() <= self.hw
    }
}

fn aabb(b: &Box3D) -> (f64, f64, f64, f64) {
    let (s, c) = b.yaw().sin_cos();
    let ex = (b.length() / 2.0 * c).abs() + (b.width() / 2.0 * s).abs();
    let ey = (b.length() / 2.0 * s).abs() + (b.width() / 2.0 * c).abs();
    (b.cx() - ex, b.cx() + ex, b.cy() - ey, b.cy() + ey)
}

/// Exact fraction with a positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frac {
    pub num: u128,
    pub den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Frac {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den > 0);
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn plus(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn gt(self, o: Frac) -> bool {
        self.num * o.den > o.num * self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// All-point AP from a ranked TP/FP list, by recall level: each of the
/// `num_truth` recall steps of size `1/num_truth` contributes the best
/// precision among ranks that reach it.
pub fn enumerated_ap(ranked_tp: &[bool], num_truth: usize) -> Frac {
    if num_truth == 0 {
        return Frac::new(u128::from(ranked_tp.is_empty()), 1);
    }
    let mut prefix = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0u128;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += u128::from(hit);
        prefix.push((tp, i as u128 + 1));
    }
    let mut ap = Frac::new(0, 1);
    for k in 1..=num_truth as u128 {
        let mut best = Frac::new(0, 1);
        for &(tp, rank) in &prefix {
            if tp >= k {
                let p = Frac::new(tp, rank);
                if p.gt(best) {
                    best = p;
                }
            }
        }
        ap = ap.plus(Frac::new(best.num, best.den * num_truth as u128));
    }
    ap
}

/// One detection in a hand-built fixture: its confidence and the truth object
/// it sits exactly on (`None` places it far from everything).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureDet {
    pub confidence: f64,
    pub on_truth: Option<usize>,
}

/// Single-frame fixture: `num_truth` well-separated sedans, detections either
/// duplicated exactly onto a truth box or placed far away.
pub fn ap_fixture(num_truth: usize, dets: &[FixtureDet]) -> (Dataset, Dataset) {
    let sedan = |cx: f64, conf: Option<f64>| {
        ObjectLabel::new(
            "Sedan",
            Box3D::new(cx, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).expect("valid"),
            conf,
        )
        .expect("valid")
    };
    let frame = |objects| Frame::new("fixture", 0, WeatherCondition::Normal, RoadType::Urban).with_objects(objects);
    let truth = (0..num_truth).map(|i| sedan(20.0 * i as f64, None)).collect();
    let detections = dets
        .iter()
        .enumerate()
        .map(|(k, d)| match d.on_truth {
            Some(i) => sedan(20.0 * i as f64, Some(d.confidence)),
            None => sedan(-1000.0 - 20.0 * k as f64, Some(d.confidence)),
        })
        .collect();
    (
        Dataset::from_frames("dets", [frame(detections)]).expect("one frame"),
        Dataset::from_frames("truth", [frame(truth)]).expect("one frame"),
    )
}

/// TP flags of a fixture in ranking order (descending confidence, ties by
/// index): the first detection on each truth object is a hit, later ones and
/// far-away ones are misses.
pub fn fixture_ranked_tp(dets: &[FixtureDet]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut claimed = Vec::new();
    order
        .into_iter()
        .map(|k| match dets[k].on_truth {
            Some(i) if !claimed.contains(&i) => {
                claimed.push(i);
                true
            }
            _ => false,
        })
        .collect()
}

/// Attaches confidence 1 to every object that lacks one.
pub fn with_unit_confidence(d: &Dataset) -> Dataset {
    d.map_frames(|f| {
        let mut f = f.clone();
        for o in &mut f.objects {
            o.confidence.get_or_insert(1.0);
        }
        f
    })
}


/// Detections sharing one confidence: `on_truth` of them sit exactly on
/// distinct truth boxes, `spurious` sit far from everything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountTier {
    pub confidence: f64,
    pub on_truth: usize,
    pub spurious: usize,
}

/// Many-frame fixture whose TP/FP counts at any confidence threshold are
/// known in closed form. Truth boxes are packed `per_frame` to a frame;
/// tiers claim truth boxes in order.
pub fn counts_fixture(num_truth: usize, tiers: &[CountTier], per_frame: usize) -> (Dataset, Dataset) {
    assert!(per_frame > 0);
    assert!(tiers.iter().map(|t| t.on_truth).sum::<usize>() <= num_truth);
    let sedan = |cx: f64, conf: Option<f64>| {
        ObjectLabel::new(
            "Sedan",
            Box3D::new(cx, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).expect("valid"),
            conf,
        )
        .expect("valid")
    };
    let n_frames = num_truth.div_ceil(per_frame).max(1);
    let mut truth: Vec<Vec<ObjectLabel>> = vec![Vec::new(); n_frames];
    let mut dets: Vec<Vec<ObjectLabel>> = vec![Vec::new(); n_frames];
    for i in 0..num_truth {
        truth[i / per_frame].push(sedan(20.0 * (i % per_frame) as f64, None));
    }
    let (mut next_truth, mut next_far) = (0usize, 0usize);
    for tier in tiers {
        for _ in 0..tier.on_truth {
            let i = next_truth;
            next_truth += 1;
            dets[i / per_frame].push(sedan(20.0 * (i % per_frame) as f64, Some(tier.confidence)));
        }
        for _ in 0..tier.spurious {
            let f = next_far % n_frames;
            let k = next_far / n_frames;
            next_far += 1;
            dets[f].push(sedan(-1000.0 - 20.0 * k as f64, Some(tier.confidence)));
        }
    }
    let frames = |objs: Vec<Vec<ObjectLabel>>| {
        objs.into_iter()
            .enumerate()
            .map(|(t, o)| Frame::new("counts", t as u64, WeatherCondition::Normal, RoadType::Urban).with_objects(o))
    };
    (
        Dataset::from_frames("dets", frames(dets)).expect("unique frames"),
        Dataset::from_frames("truth", frames(truth)).expect("unique frames"),
    )
}

/// Tiers whose sweep over {0.1, 0.3, 0.5} against 10 000 truth boxes gives
/// precision/recall 0.757/0.621, 0.878/0.593 and 0.930/0.557.
pub const THRESHOLD_TABLE_TIERS: [CountTier; 3] = [
    CountTier {
        confidence: 0.9,
        on_truth: 5570,
        spurious: 419,
    },
    CountTier {
        confidence: 0.4,
        on_truth: 360,
        spurious: 405,
    },
    CountTier {
        confidence: 0.2,
        on_truth: 280,
        spurious: 1169,
    },
];
pub const THRESHOLD_TABLE_TRUTH: usize = 10_000;
