use approx::assert_abs_diff_eq;
use hyperspread::calibration::*;
use proptest::prelude::*;

fn rec(p: &[f64], y: usize) -> PredictionRecord {
    PredictionRecord::new(p.to_vec(), y).unwrap()
}

/// Two-class record whose top probability is `conf` and whose prediction is
/// correct iff `correct`.
fn binary(conf: f64, correct: bool) -> PredictionRecord {
    let y = if correct { 0 } else { 1 };
    rec(&[conf, 1.0 - conf], y)
}

#[test]
fn single_bin_log() {
    let log: Vec<_> = (0..10).map(|i| binary(0.8, i < 5)).collect();
    let report = compute_ece(&log, 15).unwrap();
    assert_abs_diff_eq!(report.ece, 0.3, epsilon = 1e-12);
    assert_abs_diff_eq!(report.accuracy, 0.5, epsilon = 1e-15);

    let rows = reliability_data(&report);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].count, 10);
    assert_abs_diff_eq!(rows[0].accuracy, 0.5);
    assert_abs_diff_eq!(rows[0].mean_confidence, 0.8, epsilon = 1e-12);
    assert_abs_diff_eq!(rows[0].bin_center, 0.8 - 1.0 / 30.0, epsilon = 1e-12);
}

#[test]
fn two_bin_log() {
    // Six records at one confidence cannot have accuracy 0.6, so the
    // zero-gap bin sits at 0.5 with three hits. ECE = 0.4 * 0.15 + 0.6 * 0.
    let mut log: Vec<_> = (0..4).map(|i| binary(0.9, i < 3)).collect();
    log.extend((0..6).map(|i| binary(0.5, i < 3)));
    let report = compute_ece(&log, 15).unwrap();
    assert_abs_diff_eq!(report.ece, 0.06, epsilon = 1e-12);
    assert_eq!(reliability_data(&report).len(), 2);
}

#[test]
fn perfect_logs() {
    let confident: Vec<_> = (0..7).map(|_| rec(&[0.0, 1.0, 0.0], 1)).collect();
    let r = compute_ece(&confident, 15).unwrap();
    assert_eq!(r.ece, 0.0);
    assert_eq!(r.sce, 0.0);

    let single = vec![rec(&[1.0], 0); 3];
    assert_eq!(compute_sce(&single, 15).unwrap(), 0.0);

    // per-class confidence equals the per-class frequency in every bin
    let mut calibrated = Vec::new();
    for i in 0..4 {
        calibrated.push(rec(&[0.75, 0.25], if i < 3 { 0 } else { 1 }));
    }
    let r = compute_ece(&calibrated, 4).unwrap();
    assert_abs_diff_eq!(r.ece, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r.sce, 0.0, epsilon = 1e-12);
    for row in reliability_data(&r) {
        assert_abs_diff_eq!(row.accuracy, row.mean_confidence, epsilon = 1e-12);
    }
}

#[test]
fn two_class_sce_log() {
    // Class 0 column: low bin {0.4, 0.3, 0.2} hits 1/3 at mean 0.3, high bin
    // {0.9, 0.8, 0.7} hits 2/3 at mean 0.8, giving 1/60 + 1/15 = 1/12.
    // Class 1 mirrors it, so the average is 1/12 as well.
    let log = vec![
        rec(&[0.9, 0.1], 0),
        rec(&[0.8, 0.2], 1),
        rec(&[0.7, 0.3], 0),
        rec(&[0.4, 0.6], 1),
        rec(&[0.3, 0.7], 1),
        rec(&[0.2, 0.8], 0),
    ];
    assert_abs_diff_eq!(compute_sce(&log, 2).unwrap(), 1.0 / 12.0, epsilon = 1e-12);
}

#[test]
fn weighted_average_cases() {
    assert_abs_diff_eq!(weighted_average(&[(7, 0.42)]).unwrap(), 0.42);
    assert_abs_diff_eq!(weighted_average(&[(1, 0.2), (1, 0.4)]).unwrap(), 0.3, epsilon = 1e-15);
    // (2465 * 2.76 + 8100 * 3.92) / 10565
    assert_abs_diff_eq!(
        weighted_average(&[(2465, 2.76), (8100, 3.92)]).unwrap(),
        38555.4 / 10565.0,
        epsilon = 1e-12
    );
    assert!(weighted_average(&[]).is_err());
}

#[test]
fn log_file_round_trip() {
    let log = vec![rec(&[0.25, 0.75], 1), rec(&[0.5, 0.5], 0), rec(&[0.1, 0.9], 0)];
    let mut buf = Vec::new();
    write_prediction_log(&log, &mut buf).unwrap();
    assert!(buf.starts_with(b"true_class,p_0,p_1\n"));
    assert_eq!(read_prediction_log(buf.as_slice()).unwrap(), log);
}

fn arb_log() -> impl Strategy<Value = Vec<PredictionRecord>> {
    prop::collection::vec(
        (prop::collection::vec(0.01f64..1.0, 3), 0usize..3),
        1..60,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .map(|(w, y)| {
                let s: f64 = w.iter().sum();
                rec(&w.iter().map(|x| x / s).collect::<Vec<_>>(), y)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn ece_ignores_record_order(log in arb_log(), seed in any::<u64>()) {
        let mut shuffled = log.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = compute_ece(&log, 15).unwrap();
        let b = compute_ece(&shuffled, 15).unwrap();
        prop_assert!((a.ece - b.ece).abs() <= 1e-12);
        prop_assert!((a.sce - b.sce).abs() <= 1e-12);
    }

    #[test]
    fn ece_is_bounded_by_worst_bin(log in arb_log(), bins in 1usize..30) {
        let r = compute_ece(&log, bins).unwrap();
        let worst = r.bins.iter().filter(|b| b.count > 0)
            .map(|b| (b.accuracy - b.mean_confidence).abs())
            .fold(0.0, f64::max);
        prop_assert!(r.ece <= worst + 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.ece) && (0.0..=1.0).contains(&r.sce));
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), log.len());
        prop_assert!(reliability_data(&r).len() <= bins);
    }

    #[test]
    fn splitting_and_rejoining_keeps_ece(log in arb_log(), cut in 0usize..60) {
        let cut = cut.min(log.len());
        let (a, b) = log.split_at(cut);
        let joined: Vec<_> = b.iter().chain(a).cloned().collect();
        let x = compute_ece(&log, 15).unwrap().ece;
        let y = compute_ece(&joined, 15).unwrap().ece;
        prop_assert!((x - y).abs() <= 1e-12);
    }

    #[test]
    fn single_class_sce_is_ece(n in 1usize..20) {
        let log = vec![rec(&[1.0], 0); n];
        let r = compute_ece(&log, 15).unwrap();
        prop_assert!((r.sce - r.ece).abs() <= 1e-12);
    }
}
