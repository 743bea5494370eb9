//! Plain-slice loss evaluation mirroring the tape ops; used by tests and by
//! retrospective reporting where no gradients are needed.

/// Soft dice loss, Eq. 4, averaged unweighted over the level rows present:
/// `pred` and `target` are `[rows, vol]` flattened, rows = len / vol.
pub fn dice_loss(pred: &[f64], target: &[f64], vol: usize) -> f64 {
    assert_eq!(pred.len(), target.len());
    assert!(vol > 0 && pred.len() % vol == 0);
    let rows = pred.len() / vol;
    let mut total = 0.0;
    for r in 0..rows {
        let p = &pred[r * vol..(r + 1) * vol];
        let y = &target[r * vol..(r + 1) * vol];
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut ysum = 0.0;
        for i in 0..vol {
            inter += p[i] * y[i];
            psum += p[i];
            ysum += y[i];
        }
        total += 1.0 - 2.0 * inter / (psum + ysum + 1.0);
    }
    total / rows as f64
}

/// Mean binary cross-entropy on probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let mut total = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_closed_forms() {
        let mut pred = vec![0.0; 500];
        let mut tgt = vec![0.0; 500];
        for i in 0..100 {
            pred[i] = 1.0;
            tgt[i] = 1.0;
        }
        assert!((dice_loss(&pred, &tgt, 500) - (1.0 - 200.0 / 201.0)).abs() < 1e-15);
        let zeros = vec![0.0; 500];
        assert!((dice_loss(&zeros, &tgt, 500) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dice_decreases_with_intersection_at_fixed_totals() {
        // Fixed P and Y totals, growing overlap: loss strictly decreases.
        let vol = 16;
        let mut tgt = vec![0.0; vol];
        tgt[..4].iter_mut().for_each(|v| *v = 1.0);
        let mut prev = f64::INFINITY;
        for overlap in 0..=4usize {
            let mut pred = vec![0.0; vol];
            for p in pred.iter_mut().take(overlap) {
                *p = 1.0;
            }
            for p in pred.iter_mut().take(4 + (4 - overlap)).skip(4) {
                *p = 1.0;
            }
            let l = dice_loss(&pred, &tgt, vol);
            assert!((0.0..=1.0).contains(&l));
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn bce_limits() {
        let half = vec![0.5; 32];
        let tgt: Vec<f64> = (0..32).map(|i| f64::from(i % 2 == 0)).collect();
        assert!((bce_loss(&half, &tgt) - std::f64::consts::LN_2).abs() < 1e-12);
        // Perfect confident match tends to zero loss.
        let exact: Vec<f64> = tgt.iter().map(|&y| if y > 0.5 { 1.0 - 1e-9 } else { 1e-9 }).collect();
        assert!(bce_loss(&exact, &tgt) < 1e-6);
    }
}
