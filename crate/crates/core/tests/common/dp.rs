//! Brute-force path search over per-frame candidates.

use rand::Rng;
use signtime::keypoints::Candidate;

pub fn objective(path: &[Candidate], lambda: f64) -> f64 {
    let conf: f64 = path.iter().map(|c| c.confidence).sum();
    let mut length = 0.0;
    for w in path.windows(2) {
        let dx = w[0].position[0] - w[1].position[0];
        let dy = w[0].position[1] - w[1].position[1];
        length += (dx * dx + dy * dy).sqrt();
    }
    conf - lambda * length
}

/// Best objective over every one-candidate-per-frame path.
pub fn exhaustive(frames: &[Vec<Candidate>], lambda: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; frames.len()];
    loop {
        let path: Vec<Candidate> = idx.iter().zip(frames).map(|(&i, f)| f[i]).collect();
        best = best.max(objective(&path, lambda));
        let mut t = 0;
        loop {
            if t == frames.len() {
                return best;
            }
            idx[t] += 1;
            if idx[t] < frames[t].len() {
                break;
            }
            idx[t] = 0;
            t += 1;
        }
    }
}

pub fn random_frames(rng: &mut impl Rng, max_t: usize, max_c: usize) -> Vec<Vec<Candidate>> {
    let t = rng.random_range(1..=max_t);
    (0..t)
        .map(|_| {
            (0..rng.random_range(1..=max_c))
                .map(|_| Candidate {
                    position: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    confidence: rng.random_range(0.0..1.0),
                })
                .collect()
        })
        .collect()
}
