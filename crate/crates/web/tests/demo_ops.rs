use stc_web::demo::{bound_batch, correction_preview, rollout};

#[test]
fn rollout_covers_one_episode() {
    let t = rollout(0.5, 0.5, 0.0, 1).unwrap();
    assert_eq!(t.positions.len(), 2 * 201);
    assert!(t.positions.iter().all(|p| p.abs() <= t.bound));
    assert_eq!(t, rollout(0.5, 0.5, 0.0, 1).unwrap());
}

#[test]
fn believing_the_wrong_gravity_costs_return() {
    let right = rollout(0.5, 0.5, 0.0, 2).unwrap().total_return;
    let wrong = rollout(0.5, 1.0, 0.0, 2).unwrap().total_return;
    assert!(right > wrong, "{right} vs {wrong}");
    assert!(rollout(0.5, 0.5, -1.0, 2).is_err());
}

#[test]
fn bound_batches_hold() {
    for which in ["1", "2", "3", "telescoping"] {
        let b = bound_batch(which, 25, 9).unwrap();
        assert_eq!(b.lhs.len(), 25);
        assert_eq!(b.violations, 0, "{which}");
    }
    assert!(bound_batch("4", 5, 0).is_err());
    assert!(bound_batch("1", 0, 0).is_err());
}

#[test]
fn preview_moves_vertical_actions_toward_target() {
    let p = correction_preview(0.5, 1.0, 0).unwrap();
    assert!(p.acceptance_rate > 0.0 && p.acceptance_rate <= 1.0);
    assert_eq!(p.grid.len(), p.kde_target.len());
    assert!(p.w1_corrected[1] < p.w1_source[1], "{:?} {:?}", p.w1_corrected, p.w1_source);
    let naive = correction_preview(0.5, 0.0, 0).unwrap();
    assert_eq!(naive.acceptance_rate, 0.0);
    assert_eq!(naive.kde_source, naive.kde_corrected);
}
