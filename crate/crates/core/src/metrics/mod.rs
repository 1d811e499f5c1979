//! Region similarity `J`, boundary measure `F` and their per-sequence
//! statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::field::Mask;

fn same_size(op: &'static str, a: &Mask, b: &Mask) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(op, alloc::format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_size("jaccard", pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour inside the frame that is background.
pub fn boundary(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    Mask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && ((x > 0 && !mask.get(x - 1, y))
                || (x + 1 < w && !mask.get(x + 1, y))
                || (y > 0 && !mask.get(x, y - 1))
                || (y + 1 < h && !mask.get(x, y + 1)))
    })
}

/// Exact squared Euclidean distance transform of one row (lower envelope
/// of parabolas). `f` holds 0 at sites and infinity elsewhere.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            out.fill(f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                // k > 0 here: z[0] is -inf
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest set pixel of `sites`
/// (infinity when `sites` is empty).
pub fn squared_distance_transform(sites: &Mask) -> Vec<f64> {
    let (w, h) = (sites.width(), sites.height());
    let mut grid: Vec<f64> = sites.bits().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let n = w.max(h);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let (mut col, mut out) = (vec![0.0; h], vec![0.0; n]);
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        edt_1d(&row, &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Default boundary tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    (0.008 * ((width * width + height * height) as f64).sqrt()).ceil()
}

/// Fraction of the set pixels of `from` within `tol` of a set pixel of `to`.
fn matched_fraction(from: &Mask, to_dist: &[f64], tol: f64) -> Option<f64> {
    let total = from.count();
    if total == 0 {
        return None;
    }
    let tol2 = tol * tol;
    let hit = from.bits().iter().zip(to_dist).filter(|(&b, &d)| b && d <= tol2).count();
    Some(hit as f64 / total as f64)
}

fn disc_is_cheap(w: usize, h: usize, tol: f64, points: usize) -> bool {
    let r = tol.min((w + h) as f64);
    let side = 2.0 * r + 1.0;
    side * side * points as f64 <= 4.0 * (w * h) as f64
}

/// Same as [`matched_fraction`], probing a disc of radius `tol` around each
/// pixel of `from` instead of a full distance transform.
fn matched_in_disc(from: &Mask, to: &Mask, tol: f64) -> f64 {
    let (w, h) = (from.width() as isize, from.height() as isize);
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let mut offsets: Vec<(isize, isize)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx * dx + dy * dy) as f64 <= tol2 {
                offsets.push((dx, dy));
            }
        }
    }
    offsets.sort_by_key(|&(dx, dy)| dx * dx + dy * dy);
    let bits = to.bits();
    let (mut total, mut hit) = (0usize, 0usize);
    for (i, _) in from.bits().iter().enumerate().filter(|(_, &b)| b) {
        total += 1;
        let (x, y) = ((i as isize) % w, (i as isize) / w);
        hit += offsets.iter().any(|&(dx, dy)| {
            let (u, v) = (x + dx, y + dy);
            u >= 0 && v >= 0 && u < w && v < h && bits[(v * w + u) as usize]
        }) as usize;
    }
    hit as f64 / total as f64
}

/// Boundary F-measure with a pixel distance tolerance.
///
/// Precision is the fraction of predicted boundary pixels within
/// `tolerance` of the ground-truth boundary, recall the converse. Two empty
/// boundaries score 1; exactly one empty boundary scores 0.
pub fn boundary_f(pred: &Mask, gt: &Mask, tolerance: f64) -> Result<f64> {
    same_size("boundary_f", pred, gt)?;
    if !(tolerance >= 0.0) {
        return Err(Error::Invalid(alloc::format!("tolerance must be non-negative, got {tolerance}")));
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (np, ng) = (bp.count(), bg.count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (precision, recall) = if disc_is_cheap(pred.width(), pred.height(), tolerance, np + ng) {
        (matched_in_disc(&bp, &bg, tolerance), matched_in_disc(&bg, &bp, tolerance))
    } else {
        (
            matched_fraction(&bp, &squared_distance_transform(&bg), tolerance).unwrap_or(0.0),
            matched_fraction(&bg, &squared_distance_transform(&bp), tolerance).unwrap_or(0.0),
        )
    };
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Mean, recall (fraction of frames scoring above 0.5) and decay (mean of
/// the first quarter of frames minus mean of the last quarter, 0 for fewer
/// than four frames).
pub fn summarize(scores: &[f64]) -> (f64, f64, f64) {
    if scores.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let recall = scores.iter().filter(|&&s| s > 0.5).count() as f64 / n;
    let q = scores.len() / 4;
    let decay = if q == 0 {
        0.0
    } else {
        let head = scores[..q].iter().sum::<f64>() / q as f64;
        let tail = scores[scores.len() - q..].iter().sum::<f64>() / q as f64;
        head - tail
    };
    (mean, recall, decay)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub sequence: String,
    pub j: Vec<f64>,
    pub f: Vec<f64>,
    pub j_mean: f64,
    pub j_recall: f64,
    pub j_decay: f64,
    pub f_mean: f64,
    pub f_recall: f64,
    pub f_decay: f64,
}

impl MetricsReport {
    pub fn from_scores(sequence: &str, j: Vec<f64>, f: Vec<f64>) -> Self {
        let (j_mean, j_recall, j_decay) = summarize(&j);
        let (f_mean, f_recall, f_decay) = summarize(&f);
        Self { sequence: sequence.into(), j, f, j_mean, j_recall, j_decay, f_mean, f_recall, f_decay }
    }
}

/// Per-frame `J` and `F` of an ordered sequence and their statistics.
/// `tolerance` defaults to [`default_tolerance`] of the first frame.
pub fn sequence_metrics(sequence: &str, preds: &[Mask], gts: &[Mask], tolerance: Option<f64>) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::Invalid(alloc::format!("{} predictions for {} ground-truth masks", preds.len(), gts.len())));
    }
    let tol = match (tolerance, gts.first()) {
        (Some(t), _) => t,
        (None, Some(g)) => default_tolerance(g.width(), g.height()),
        (None, None) => 0.0,
    };
    let mut j = Vec::with_capacity(preds.len());
    let mut f = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        j.push(jaccard(p, g)?);
        f.push(boundary_f(p, g, tol)?);
    }
    Ok(MetricsReport::from_scores(sequence, j, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    #[test]
    fn jaccard_examples() {
        let a = rect(8, 8, 1, 1, 4, 4);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &rect(8, 8, 5, 5, 7, 7)).unwrap(), 0.0);
        // 6 px prediction, 4 px truth, 2 px overlap
        let pred = rect(8, 8, 0, 0, 3, 2);
        let gt = rect(8, 8, 1, 1, 3, 3);
        assert_eq!((pred.count(), gt.count()), (6, 4));
        assert_eq!(jaccard(&pred, &gt).unwrap(), 0.25);
        assert_eq!(jaccard(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap(), 1.0);
        assert!(jaccard(&Mask::empty(3, 3), &Mask::empty(3, 4)).is_err());
    }

    fn brute_sq_distance(sites: &Mask) -> Vec<f64> {
        let (w, h) = (sites.width(), sites.height());
        let pts: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| sites.get(x, y)).collect();
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                pts.iter()
                    .map(|&(a, b)| (x as f64 - a as f64).powi(2) + (y as f64 - b as f64).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn boundary_is_inner_ring() {
        let b = boundary(&rect(6, 6, 1, 1, 5, 5));
        assert_eq!(b.count(), 12);
        assert!(!b.get(2, 2) && b.get(1, 3) && !b.get(0, 0));
    }

    #[test]
    fn boundary_f_examples() {
        let sq = rect(12, 12, 3, 3, 8, 8);
        assert_eq!(boundary_f(&sq, &sq, 0.0).unwrap(), 1.0);
        assert_eq!(boundary_f(&sq, &rect(12, 12, 3, 3, 8, 8), 1.0).unwrap(), 1.0);
        // shifted by one pixel: every boundary pixel within 1 px of the other ring
        let shifted = rect(12, 12, 4, 3, 9, 8);
        let (bp, bg) = (boundary(&shifted), boundary(&sq));
        let dg = brute_sq_distance(&bg);
        let dp = brute_sq_distance(&bp);
        assert!(bp.bits().iter().zip(&dg).all(|(&b, &d)| !b || d <= 1.0));
        assert!(bg.bits().iter().zip(&dp).all(|(&b, &d)| !b || d <= 1.0));
        assert_eq!(boundary_f(&shifted, &sq, 1.0).unwrap(), 1.0);
        assert!(boundary_f(&shifted, &sq, 0.0).unwrap() < 1.0);
        // far apart
        assert_eq!(boundary_f(&rect(20, 20, 0, 0, 4, 4), &rect(20, 20, 12, 12, 18, 18), 2.0).unwrap(), 0.0);
        assert_eq!(boundary_f(&Mask::empty(4, 4), &Mask::empty(4, 4), 1.0).unwrap(), 1.0);
        assert_eq!(boundary_f(&Mask::empty(4, 4), &rect(4, 4, 1, 1, 3, 3), 1.0).unwrap(), 0.0);
        assert!(boundary_f(&sq, &sq, -1.0).is_err());
    }

    #[test]
    fn exact_overlap_at_zero_tolerance() {
        let a = rect(10, 10, 1, 1, 6, 6);
        let b = rect(10, 10, 1, 1, 6, 8);
        let (ba, bb) = (boundary(&a), boundary(&b));
        let common = ba.bits().iter().zip(bb.bits()).filter(|(&x, &y)| x && y).count() as f64;
        let (p, r) = (common / ba.count() as f64, common / bb.count() as f64);
        let want = 2.0 * p * r / (p + r);
        assert!((boundary_f(&a, &b, 0.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn default_tolerance_rounds_up() {
        assert_eq!(default_tolerance(64, 64), 1.0);
        assert_eq!(default_tolerance(854, 480), 8.0);
    }

    #[test]
    fn sequence_examples() {
        let (m, r, d) = summarize(&[0.8; 8]);
        assert!((m - 0.8).abs() < 1e-12 && r == 1.0 && d.abs() < 1e-12);
        assert_eq!(summarize(&[1.0, 1.0, 0.0, 0.0]).1, 0.5);
        let (_, _, d) = summarize(&[0.9, 0.9, 0.5, 0.1, 0.3, 0.6, 0.7, 0.7]);
        assert!((d - 0.2).abs() < 1e-12);
        let gts = vec![rect(8, 8, 1, 1, 5, 5); 4];
        let preds = vec![rect(8, 8, 1, 1, 5, 5), rect(8, 8, 1, 1, 5, 3), Mask::empty(8, 8), rect(8, 8, 1, 1, 5, 5)];
        let rep = sequence_metrics("s", &preds, &gts, None).unwrap();
        assert_eq!(rep.j, vec![1.0, 0.5, 0.0, 1.0]);
        assert_eq!(rep.j_recall, 0.5);
        assert_eq!(rep.j_decay, 0.0);
        assert!(sequence_metrics("s", &preds[..3], &gts, None).is_err());
    }

    fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(any::<bool>(), w * h).prop_map(move |b| Mask::new(w, h, b).unwrap())
    }

    proptest! {
        #[test]
        fn distance_transform_matches_brute_force(m in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| mask_strategy(w, h))) {
            prop_assert_eq!(squared_distance_transform(&m), brute_sq_distance(&m));
        }

        #[test]
        fn jaccard_is_symmetric_and_monotone((a, b, k) in (mask_strategy(6, 5), mask_strategy(6, 5), 0usize..30)) {
            let j = jaccard(&a, &b).unwrap();
            prop_assert_eq!(j, jaccard(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&j));
            // add one true-positive pixel
            if let Some(i) = (0..30).map(|d| (k + d) % 30).find(|&i| b.bits()[i] && !a.bits()[i]) {
                let mut more = a.clone();
                more.bits_mut()[i] = true;
                prop_assert!(jaccard(&more, &b).unwrap() >= j);
            }
        }

        #[test]
        fn disc_probe_matches_distance_transform((a, b, tol) in (mask_strategy(9, 7), mask_strategy(9, 7), 0.0f64..5.0)) {
            let (ba, bb) = (boundary(&a), boundary(&b));
            prop_assume!(ba.count() > 0 && bb.count() > 0);
            prop_assert_eq!(matched_in_disc(&ba, &bb, tol), matched_fraction(&ba, &squared_distance_transform(&bb), tol).unwrap());
        }

        #[test]
        fn huge_tolerance_gives_one((a, b) in (mask_strategy(7, 7), mask_strategy(7, 7))) {
            prop_assume!(boundary(&a).count() > 0 && boundary(&b).count() > 0);
            prop_assert_eq!(boundary_f(&a, &b, 1e6).unwrap(), 1.0);
        }

        #[test]
        fn reversal_negates_decay(scores in proptest::collection::vec(0.0f64..=1.0, 0..24)) {
            let (m, r, d) = summarize(&scores);
            let rev: Vec<f64> = scores.iter().rev().copied().collect();
            let (m2, r2, d2) = summarize(&rev);
            prop_assert!((m - m2).abs() < 1e-12);
            prop_assert_eq!(r, r2);
            prop_assert!((d + d2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&d));
        }
    }
}
