use std::collections::HashMap;

use num_traits::{One, Zero};
use proptest::prelude::*;
use torusmix::composite::FractalSpec;
use torusmix::schedule::*;

/// `t_{k,m}` from the two recursions `t_{k,m} + 2^{-2k} = t_{k+1,2m}` and
/// `t_{k+1,2m+1} = t_{k+1,2m} + 2^{1-2(k+1)}`, seeded by `t_{1,0} = 0`.
fn recursive_starts(depth: u32) -> HashMap<(u32, u64), Rational> {
    let mut t = HashMap::new();
    t.insert((1, 0), Rational::zero());
    t.insert((1, 1), pow2(-1));
    for k in 1..depth {
        for m in 0..(1u64 << k) {
            let base = t[&(k, m)].clone() + pow2(-2 * k as i32);
            t.insert((k + 1, 2 * m + 1), base.clone() + pow2(1 - 2 * (k as i32 + 1)));
            t.insert((k + 1, 2 * m), base);
        }
    }
    t
}

#[test]
fn start_times_match_recursion() {
    let oracle = recursive_starts(10);
    for (&(k, m), want) in &oracle {
        let got = shear_start_time(DyadicPair::new(k, m).unwrap()).unwrap().to_rational();
        assert_eq!(&got, want, "t({k},{m})");
    }
}

#[test]
fn start_time_table() {
    let t = |k, m| shear_start_time(DyadicPair::new(k, m).unwrap()).unwrap().to_rational();
    assert_eq!(t(1, 0), ratio(0, 1));
    assert_eq!(t(1, 1), ratio(1, 2));
    assert_eq!(t(2, 0), ratio(1, 4));
    assert_eq!(t(2, 1), ratio(3, 8));
    assert_eq!(t(3, 0), ratio(5, 16));
    assert_eq!(t(3, 1), ratio(11, 32));
    assert_eq!(t(3, 3), ratio(15, 32));
}

#[test]
fn dyadic_budget_partial_sums() {
    for depth in 0..=16 {
        let taus = (1..=depth).map(|k| pow2(-2 * k)).collect();
        let e = generate_schedule(&ScheduleFamily::Dyadic { taus }).unwrap();
        assert_eq!(total_duration(&e), Rational::one() - pow2(-depth), "depth {depth}");
        assert!(is_disjoint(&e));
        assert_eq!(e.len(), (1usize << (depth + 1)) - 2);
    }
}

#[test]
fn canonical_schedule_two_levels() {
    let e = FractalSpec::canonical(2).schedule().unwrap();
    assert_eq!(e.len(), 6);
    assert_eq!(total_duration(&e), ratio(2, 4) + ratio(4, 16));
}

#[test]
fn finiteness_is_checked() {
    assert!(check_finiteness(&[ratio(1, 4), ratio(1, 16)]).is_ok());
    assert!(check_finiteness(&[ratio(1, 4), ratio(1, 8)]).is_err());
    assert!(generate_schedule(&ScheduleFamily::Dyadic {
        taus: vec![ratio(1, 2)]
    })
    .is_err());
}

#[test]
fn epoch_constants() {
    assert_eq!(epoch_time(1), ratio(12, 1));
    assert_eq!(epoch_time(2), ratio(21, 1));
    assert_eq!(epoch_limit(), ratio(42, 1));
    assert_eq!(swap_start_time(QuadIndex::new(3, 1, 1, 1).unwrap()).unwrap(), ratio(45, 8));
}

/// Start time as the sum of every later-in-lex duration within the epoch,
/// truncated at level `cap`.
fn brute_start(q: QuadIndex, cap: u32) -> Rational {
    let mut t = Rational::zero();
    for m in 1..q.m {
        for k in m..=cap {
            t += ratio(2 * (1i64 << (k / 2)), 1) * ratio(3, 1) * pow2(-(k as i32));
        }
    }
    for k in q.m..=cap {
        let w = 1u64 << (k / 2);
        let later = if k > q.k {
            2 * w
        } else if k < q.k {
            0
        } else {
            (1..=2u8)
                .flat_map(|i| (1..=w).map(move |n| (i, n)))
                .filter(|&(i, n)| (i, n) > (q.i, q.n))
                .count() as u64
        };
        t += ratio(later as i64, 1) * ratio(3, 1) * pow2(-(k as i32));
    }
    t
}

#[test]
fn swap_start_times_against_truncated_sums() {
    let cap = 60;
    for q in quad_prefix(QuadIndex::depth_bound(6)).unwrap() {
        let exact = swap_start_time(q).unwrap();
        let brute = brute_start(q, cap);
        let gap = rational_to_f64(&(exact.clone() - brute.clone()));
        assert!(exact >= brute, "{q}");
        assert!(gap < 1e-7, "{q}: {gap}");
    }
}

#[test]
fn quad_schedule_is_disjoint_and_time_ordered() {
    for depth in 1..=6 {
        let e = generate_schedule(&ScheduleFamily::Quad {
            prefix: Some(QuadIndex::depth_bound(depth)),
        })
        .unwrap();
        assert!(is_disjoint(&e));
        assert!(e.iter().all(|x| x.end() <= epoch_limit()));
    }
}

#[test]
fn csv_header_and_rows() {
    let e = generate_schedule(&ScheduleFamily::Quad {
        prefix: Some(QuadIndex::new(1, 1, 1, 1).unwrap()),
    })
    .unwrap();
    let mut buf = Vec::new();
    write_schedule_csv(&e, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "payload,start_num,start_den,duration_num,duration_den");
    assert_eq!(lines.len(), 2);
}

fn pair() -> impl Strategy<Value = DyadicPair> {
    (1u32..12).prop_flat_map(|k| (Just(k), 0..(1u64 << k))).prop_map(|(k, m)| DyadicPair::new(k, m).unwrap())
}

fn quad() -> impl Strategy<Value = QuadIndex> {
    (1u32..10)
        .prop_flat_map(|k| (Just(k), 1..=k, 1u8..=2, 1..=(1u64 << (k / 2))))
        .prop_map(|(k, m, i, n)| QuadIndex::new(k, m, i, n).unwrap())
}

proptest! {
    #[test]
    fn dyadic_order_matches_start_times(a in pair(), b in pair()) {
        prop_assume!(a != b);
        let ta = shear_start_time(a).unwrap();
        let tb = shear_start_time(b).unwrap();
        prop_assert_eq!(less_time_dyadic(a, b).unwrap(), ta < tb);
    }

    #[test]
    fn budget_windows_never_overlap(a in pair(), b in pair()) {
        prop_assume!(a != b);
        let (first, second) = if less_time_dyadic(a, b).unwrap() { (a, b) } else { (b, a) };
        let end = shear_start_time(first).unwrap().to_rational() + pow2(-2 * first.k as i32);
        prop_assert!(end <= shear_start_time(second).unwrap().to_rational());
    }

    #[test]
    fn quad_order_matches_start_times(a in quad(), b in quad()) {
        prop_assume!(a != b);
        let ta = swap_start_time(a).unwrap();
        let tb = swap_start_time(b).unwrap();
        prop_assert_eq!(less_time(a, b).unwrap(), ta < tb);
        if ta < tb {
            prop_assert!(ta + a.duration() <= tb);
        }
    }
}
