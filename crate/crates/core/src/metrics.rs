//! Accuracy measures and the FLOP cost model.

use serde::{Deserialize, Serialize};

/// `2c / M`.
pub fn normalized_chi2(cost: f64, m_scalar_rows: usize) -> f64 {
    assert!(m_scalar_rows >= 1, "need at least one measurement row");
    2.0 * cost / m_scalar_rows as f64
}

/// Rigid 2D transform `p ↦ R(rotation)·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment2D {
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl Alignment2D {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
        ]
    }
}

fn centroid(pts: &[[f64; 2]]) -> [f64; 2] {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    [sx / n, sy / n]
}

/// Least-squares rigid alignment of `est` onto `reference` (no reflection).
///
/// If either cloud is degenerate (all points coincident) the rotation is
/// left at zero and only the centroids are matched.
pub fn kabsch_align_2d(est: &[[f64; 2]], reference: &[[f64; 2]]) -> Alignment2D {
    assert_eq!(est.len(), reference.len(), "point lists differ in length");
    if est.is_empty() {
        return Alignment2D::identity();
    }
    let ce = centroid(est);
    let cr = centroid(reference);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    let (mut spread_e, mut spread_r) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let a = [e[0] - ce[0], e[1] - ce[1]];
        let b = [r[0] - cr[0], r[1] - cr[1]];
        sxx += a[0] * b[0] + a[1] * b[1];
        sxy += a[0] * b[1] - a[1] * b[0];
        spread_e += a[0] * a[0] + a[1] * a[1];
        spread_r += b[0] * b[0] + b[1] * b[1];
    }
    let rotation = if spread_e == 0.0 || spread_r == 0.0 {
        log::debug!("degenerate point cloud in alignment");
        0.0
    } else {
        sxy.atan2(sxx)
    };
    let (s, c) = rotation.sin_cos();
    Alignment2D {
        rotation,
        translation: [cr[0] - (c * ce[0] - s * ce[1]), cr[1] - (s * ce[0] + c * ce[1])],
    }
}

/// Position RMSE after rigid alignment of `est` onto `reference`.
pub fn ate(est: &[[f64; 2]], reference: &[[f64; 2]]) -> f64 {
    if est.is_empty() {
        return 0.0;
    }
    let t = kabsch_align_2d(est, reference);
    let sum: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let p = t.apply(*e);
            (p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2)
        })
        .sum();
    (sum / est.len() as f64).sqrt()
}

/// `min(2Σ_{i∈S} κ_i², Σ_i κ_i²)`, halved when no downdate is involved.
pub fn update_flops(s_columns: &[usize], colcounts: &[usize], pure_addition: bool) -> u64 {
    if s_columns.is_empty() {
        return 0;
    }
    let sq = |k: usize| (k as u64) * (k as u64);
    let partial: u64 = 2 * s_columns.iter().map(|&i| sq(colcounts[i])).sum::<u64>();
    let full: u64 = colcounts.iter().map(|&k| sq(k)).sum();
    let f = partial.min(full);
    if pure_addition {
        f / 2
    } else {
        f
    }
}

/// `2Σ_{i∈S} κ_i`.
pub fn solve_flops(s_columns: &[usize], colcounts: &[usize]) -> u64 {
    2 * s_columns.iter().map(|&i| colcounts[i] as u64).sum::<u64>()
}

/// Per-increment and cumulative FLOP counters. `solve_full` tracks what the
/// solves would have cost as full forward/backward substitutions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopTally {
    pub update: u64,
    pub solve: u64,
    pub solve_full: u64,
    pub cum_update: u64,
    pub cum_solve: u64,
    pub cum_solve_full: u64,
}

impl FlopTally {
    pub fn begin_increment(&mut self) {
        self.update = 0;
        self.solve = 0;
        self.solve_full = 0;
    }

    pub fn add_update(&mut self, f: u64) {
        self.update += f;
        self.cum_update += f;
    }

    pub fn add_solve(&mut self, f: u64, full: u64) {
        self.solve += f;
        self.cum_solve += f;
        self.solve_full += full;
        self.cum_solve_full += full;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chi2_formula() {
        assert_eq!(normalized_chi2(0.0, 4), 0.0);
        assert!((normalized_chi2(0.5, 10) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn flop_formulas() {
        // κ_S = [3, 5] padded with ones so that Σκ² = 1000
        let mut kappa = vec![3usize, 5];
        kappa.extend(std::iter::repeat_n(1, 1000 - 34));
        assert_eq!(update_flops(&[], &kappa, false), 0);
        assert_eq!(update_flops(&[0, 1], &kappa, false), 68);
        assert_eq!(update_flops(&[0, 1], &kappa, true), 34);
        let all: Vec<usize> = (0..kappa.len()).collect();
        assert_eq!(update_flops(&all, &kappa, false), 1000);
        assert_eq!(solve_flops(&[], &kappa), 0);
        assert_eq!(solve_flops(&[0, 1], &kappa), 16);
        assert_eq!(solve_flops(&all, &kappa), 2 * kappa.iter().sum::<usize>() as u64);
    }

    #[test]
    fn alignment_of_identical_and_shifted_clouds() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]];
        let a = kabsch_align_2d(&pts, &pts);
        assert!(a.rotation.abs() < 1e-15);
        assert!(a.translation[0].abs() < 1e-15 && a.translation[1].abs() < 1e-15);
        assert_eq!(ate(&pts, &pts), 0.0);

        let shifted: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        let a = kabsch_align_2d(&pts, &shifted);
        assert!((a.translation[0] - 1.0).abs() < 1e-15 && a.translation[1].abs() < 1e-15);
        assert!(ate(&pts, &shifted) < 1e-15);
    }

    #[test]
    fn degenerate_cloud_matches_centroids() {
        let est = [[1.0, 1.0], [1.0, 1.0]];
        let reference = [[0.0, 0.0], [2.0, 0.0]];
        let a = kabsch_align_2d(&est, &reference);
        assert_eq!(a.rotation, 0.0);
        assert_eq!(a.translation, [0.0, -1.0]);
    }

    #[test]
    fn single_displaced_pose() {
        // oracle: direct evaluation with the exact alignment of the problem
        let p = 400;
        let reference: Vec<[f64; 2]> = (0..p).map(|i| [(i % 20) as f64, (i / 20) as f64]).collect();
        let mut est = reference.clone();
        est[7][0] += 0.3;
        est[7][1] += 0.4;
        let a = kabsch_align_2d(&est, &reference);
        let direct = (est
            .iter()
            .zip(&reference)
            .map(|(e, r)| {
                let q = a.apply(*e);
                (q[0] - r[0]).powi(2) + (q[1] - r[1]).powi(2)
            })
            .sum::<f64>()
            / p as f64)
            .sqrt();
        let e = ate(&est, &reference);
        assert!((e - direct).abs() < 1e-15);
        assert!((e - 0.5 / (p as f64).sqrt()).abs() < 0.05 * 0.5 / (p as f64).sqrt());
        assert!(e <= 0.5 / (p as f64).sqrt());
    }

    fn cloud() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec(prop::array::uniform2(-50.0..50.0f64), 3..40)
    }

    proptest! {
        #[test]
        fn recovers_rigid_transform(pts in cloud(), th in -3.1..3.1f64, tx in -10.0..10.0f64, ty in -10.0..10.0f64) {
            let t = Alignment2D { rotation: th, translation: [tx, ty] };
            let reference: Vec<[f64; 2]> = pts.iter().map(|p| t.apply(*p)).collect();
            let spread: f64 = {
                let c = centroid(&pts);
                pts.iter().map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sum()
            };
            prop_assume!(spread > 1e-3);
            let a = kabsch_align_2d(&pts, &reference);
            prop_assert!((crate::pose_graph::normalize_angle(a.rotation - th)).abs() < 1e-9);
            prop_assert!((a.translation[0] - tx).abs() < 1e-9 && (a.translation[1] - ty).abs() < 1e-9);
            prop_assert!(ate(&pts, &reference) < 1e-9);
        }

        #[test]
        fn ate_is_rigid_invariant(pts in cloud(), noise in cloud(), th in -3.1..3.1f64, tx in -10.0..10.0f64) {
            let n = pts.len().min(noise.len());
            let reference = &pts[..n];
            let est: Vec<[f64; 2]> = reference.iter().zip(&noise).map(|(p, e)| [p[0] + 0.01 * e[0], p[1] + 0.01 * e[1]]).collect();
            let t = Alignment2D { rotation: th, translation: [tx, -tx] };
            let moved: Vec<[f64; 2]> = est.iter().map(|p| t.apply(*p)).collect();
            prop_assert!((ate(&est, reference) - ate(&moved, reference)).abs() < 1e-9);
        }

        #[test]
        fn chi2_monotone(a in 0.0..1e6f64, b in 0.0..1e6f64, m in 1usize..10000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normalized_chi2(lo, m) <= normalized_chi2(hi, m));
        }

        #[test]
        fn update_flops_bounded(k in prop::collection::vec(1usize..50, 1..60), pick in prop::collection::vec(any::<prop::sample::Index>(), 0..20), pure in any::<bool>()) {
            let mut s: Vec<usize> = pick.iter().map(|i| i.index(k.len())).collect();
            s.sort_unstable();
            s.dedup();
            let full: u64 = k.iter().map(|&x| (x * x) as u64).sum();
            prop_assert!(update_flops(&s, &k, pure) <= full);
        }
    }
}
