use kdebias::dependence::{dep_z_cross, dep_z_labels};
use kdebias::kernel::{center, label_factor, FeatureFactor, IndexedFactor};
use kdebias::labels::LabelVector;
use kdebias::metrics::{eod, group_accuracies, max_skew_at_k};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0..5.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Array2<f64>> {
    (2usize..30, 1usize..5).prop_flat_map(|(n, d)| matrix(n, d))
}

/// Matrix with `n` rows, a label vector over `c` classes and a permutation.
fn with_labels() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, Vec<usize>)> {
    (2usize..30, 1usize..4, 2usize..4).prop_flat_map(|(n, d, c)| {
        (
            matrix(n, d),
            prop::collection::vec(0..c, n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

fn permute_rows(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    m.select(ndarray::Axis(0), perm)
}

fn binary() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0..2usize, n),
            prop::collection::vec(0..2usize, n),
            prop::collection::vec(0..2usize, n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #[test]
    fn centering_is_idempotent_with_zero_column_sums(m in sized_matrix()) {
        let once = center(m.view());
        let twice = center(once.view());
        for (a, b) in once.iter().zip(twice.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for s in once.sum_axis(ndarray::Axis(0)).iter() {
            prop_assert!(s.abs() < 1e-10);
        }
    }

    #[test]
    fn dependence_is_nonnegative_and_order_free((z, labels, perm) in with_labels()) {
        let c = labels.iter().copied().max().unwrap() + 1;
        let lv = LabelVector::new(labels.clone(), c).unwrap();
        let dep = dep_z_labels(z.view(), &label_factor(&lv).unwrap()).unwrap();
        prop_assert!(dep >= 0.0);

        let shuffled: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let lp = LabelVector::new(shuffled, c).unwrap();
        let zp = permute_rows(&z, &perm);
        let dep_p = dep_z_labels(zp.view(), &label_factor(&lp).unwrap()).unwrap();
        prop_assert!(close(dep, dep_p), "{} vs {}", dep, dep_p);
    }

    #[test]
    fn cross_dependence_is_symmetric_and_shift_invariant((a, _, perm) in with_labels(), shift in -3.0..3.0f64) {
        let b = a.mapv(|v| v.sin());
        let ab = dep_z_cross(a.view(), b.view()).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(close(ab, dep_z_cross(b.view(), a.view()).unwrap()));
        prop_assert!(close(ab, dep_z_cross((&a + shift).view(), b.view()).unwrap()));
        let (ap, bp) = (permute_rows(&a, &perm), permute_rows(&b, &perm));
        prop_assert!(close(ab, dep_z_cross(ap.view(), bp.view()).unwrap()));
    }

    #[test]
    fn indexed_factor_agrees_with_its_expansion(
        base in matrix(3, 4),
        index in prop::collection::vec(0..3usize, 2..25),
        seed in 0..1000u64,
    ) {
        let n = index.len();
        let expanded = base.select(ndarray::Axis(0), &index);
        let factor = IndexedFactor::new(base.view(), index).unwrap();
        let m = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) as u64 ^ seed) as f64 % 5.0);
        let theta = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64 - j as f64) * 0.5);
        let pairs = [
            (factor.centered_cross(m.view()), expanded.view().centered_cross(m.view())),
            (factor.centered_gram(), expanded.view().centered_gram()),
            (factor.project(theta.view()), expanded.view().project(theta.view())),
        ];
        for (got, want) in pairs {
            for (g, w) in got.iter().zip(want.iter()) {
                prop_assert!((g - w).abs() < 1e-9 * w.abs().max(1.0));
            }
        }
    }

    #[test]
    fn metrics_ignore_sample_order((y, s, yhat, perm) in binary()) {
        let lv = |v: &Vec<usize>| LabelVector::new(v.clone(), 2).unwrap();
        let p = |v: &Vec<usize>| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let g = group_accuracies(&lv(&yhat), &lv(&y), &lv(&s)).unwrap();
        let gp = group_accuracies(&lv(&p(&yhat)), &lv(&p(&y)), &lv(&p(&s))).unwrap();
        prop_assert_eq!(&g, &gp);
        prop_assert!(close(g.gap, g.avg - g.wg));
        prop_assert!((0.0..=1.0).contains(&g.avg) && (0.0..=1.0).contains(&g.wg));
        prop_assert!(g.cells.values().all(|&a| a >= g.wg));

        let e = eod(&lv(&yhat), &lv(&y), &lv(&s), 1);
        let ep = eod(&lv(&p(&yhat)), &lv(&p(&y)), &lv(&p(&s)), 1);
        match (e, ep) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "EOD definedness changed under permutation"),
        }
    }

    #[test]
    fn eod_is_symmetric_in_the_sensitive_groups((y, s, yhat, _) in binary()) {
        let lv = |v: Vec<usize>| LabelVector::new(v, 2).unwrap();
        let flipped: Vec<usize> = s.iter().map(|&g| 1 - g).collect();
        let a = eod(&lv(yhat.clone()), &lv(y.clone()), &lv(s), 1);
        let b = eod(&lv(yhat), &lv(y), &lv(flipped), 1);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=1.0).contains(&a));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "EOD definedness changed under group swap"),
        }
    }

    #[test]
    fn max_skew_is_bounded_and_monotone_invariant(
        (s, scores) in (4usize..40).prop_flat_map(|n| (
            prop::collection::vec(0..2usize, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )),
        k_frac in 0.0..1.0f64,
    ) {
        prop_assume!(s.contains(&0) && s.contains(&1));
        let lv = LabelVector::new(s, 2).unwrap();
        let k = 1 + (k_frac * (scores.len() - 1) as f64) as usize;
        let skew = max_skew_at_k(&scores, &lv, k).unwrap();
        prop_assert!(skew <= 2f64.ln() + 1e-12);
        prop_assert!(skew >= 0.0 - 1e-12);
        let squashed: Vec<f64> = scores.iter().map(|v| v.tanh() * 3.0 + 1.0).collect();
        // tanh may merge nearly equal scores into ties; compare only when order is kept.
        let mut a: Vec<usize> = (0..scores.len()).collect();
        let mut b = a.clone();
        a.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
        b.sort_by(|&i, &j| squashed[j].total_cmp(&squashed[i]));
        if a == b {
            prop_assert_eq!(skew, max_skew_at_k(&squashed, &lv, k).unwrap());
        }
    }
}
