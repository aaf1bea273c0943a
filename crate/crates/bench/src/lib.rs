//! Seeded input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ovtad::trainmath::CostMatrix;
use ovtad::{Segment, SegmentDetection, VideoDetections};

pub fn cost_matrix(n: usize, m: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * m).map(|_| rng.random_range(0.0..10.0)).collect();
    CostMatrix::new(n, m, data).expect("finite costs")
}

pub fn detections(count: usize, duration: f64, seed: u64) -> Vec<SegmentDetection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = rng.random_range(0.0..duration * 0.9);
            let e = (s + rng.random_range(1.0..duration * 0.2)).min(duration);
            SegmentDetection::agnostic(Segment::new(s, e).expect("ordered"), rng.random_range(0.0..1.0))
                .expect("valid score")
        })
        .collect()
}

/// Predictions and ground truth over `videos` videos with labels `class_0..classes`.
pub fn eval_instance(videos: usize, per_video: usize, classes: usize, seed: u64) -> (VideoDetections, VideoDetections) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = VideoDetections::new();
    let mut gt = VideoDetections::new();
    for v in 0..videos {
        let id = format!("v{v:05}");
        let mut g = Vec::new();
        let mut p = Vec::new();
        for _ in 0..per_video {
            let s = rng.random_range(0.0..100.0);
            let len = rng.random_range(2.0..30.0);
            let label = format!("class_{}", rng.random_range(0..classes));
            g.push(SegmentDetection::new(Segment::new(s, s + len).unwrap(), 1.0, Some(label.clone())).unwrap());
            for _ in 0..4 {
                let js = s + rng.random_range(-3.0..3.0);
                let je = js + len * rng.random_range(0.7..1.3);
                let l = if rng.random_bool(0.7) { label.clone() } else { format!("class_{}", rng.random_range(0..classes)) };
                p.push(SegmentDetection::new(Segment::new(js, je).unwrap(), rng.random_range(0.0..1.0), Some(l)).unwrap());
            }
        }
        gt.insert(id.clone(), g);
        preds.insert(id, p);
    }
    (preds, gt)
}
