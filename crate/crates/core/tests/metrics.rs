use proptest::prelude::*;
use tgpt_core::evaluation::{rmae, rrmse, Score};

/// Brute-force versions over flat index arithmetic.
fn oracle(a: &[Vec<f64>], f: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let n = a.len();
    let h = a[0].len();
    let (mut num, mut den, mut rnum, mut rden) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let mut sf = 0.0;
        let mut sb = 0.0;
        for t in 0..h {
            num += f64::abs(a[i][t] - f[i][t]);
            den += f64::abs(a[i][t] - b[i][t]);
            sf += f64::powi(a[i][t] - f[i][t], 2);
            sb += f64::powi(a[i][t] - b[i][t], 2);
        }
        rnum += f64::sqrt(sf);
        rden += f64::sqrt(sb);
    }
    (num / den, rnum / rden)
}

fn fixture(max_series: usize, max_h: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1..=max_series, 1..=max_h).prop_flat_map(|(n, h)| {
        let grid = move || prop::collection::vec(prop::collection::vec(-100.0..100.0f64, h), n);
        (grid(), grid(), grid())
    })
}

fn value(s: Score) -> f64 {
    s.value().expect("defined")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn agree_with_double_loop_oracle((a, f, b) in fixture(50, 24)) {
        let (m, r) = oracle(&a, &f, &b);
        prop_assert!((value(rmae(&a, &f, &b).unwrap()) - m).abs() <= 1e-12 * m.max(1.0));
        prop_assert!((value(rrmse(&a, &f, &b).unwrap()) - r).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn base_against_itself_is_exactly_one((a, _f, b) in fixture(20, 12)) {
        prop_assert_eq!(rmae(&a, &b, &b).unwrap(), Score::Value(1.0));
        prop_assert_eq!(rrmse(&a, &b, &b).unwrap(), Score::Value(1.0));
    }

    #[test]
    fn horizon_one_metrics_are_bitwise_equal((a, f, b) in fixture(50, 1)) {
        let m = value(rmae(&a, &f, &b).unwrap());
        let r = value(rrmse(&a, &f, &b).unwrap());
        prop_assert_eq!(m.to_bits(), r.to_bits());
    }

    #[test]
    fn scale_invariance((a, f, b) in fixture(20, 12), c in 0.01..100.0f64) {
        let s = |x: &Vec<Vec<f64>>| x.iter().map(|r| r.iter().map(|v| v * c).collect()).collect::<Vec<Vec<f64>>>();
        let (sa, sf, sb) = (s(&a), s(&f), s(&b));
        prop_assert!((value(rmae(&sa, &sf, &sb).unwrap()) - value(rmae(&a, &f, &b).unwrap())).abs() < 1e-12 * value(rmae(&a, &f, &b).unwrap()).max(1.0));
        prop_assert!((value(rrmse(&sa, &sf, &sb).unwrap()) - value(rrmse(&a, &f, &b).unwrap())).abs() < 1e-12 * value(rrmse(&a, &f, &b).unwrap()).max(1.0));
    }
}
