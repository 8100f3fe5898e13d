use dpstream_core::ledger::{Eps, Filter, Ledger, Subsystem};
use num_rational::Ratio;
use proptest::prelude::*;

type RawCharge = (usize, usize, i128, i128, usize);

fn charges() -> impl Strategy<Value = Vec<RawCharge>> {
    prop::collection::vec((0usize..60, 0usize..20, 1i128..5, 1i128..65, 0usize..3), 0..40)
}

fn subsystem(i: usize) -> Subsystem {
    [Subsystem::Multires, Subsystem::Continual, Subsystem::Sliding][i]
}

fn build(raw: &[RawCharge]) -> Ledger {
    let mut l = Ledger::with_uniform_budget(Ratio::from_integer(1));
    for (n, &(a, len, num, den, s)) in raw.iter().enumerate() {
        l.charge((a, a + len), Ratio::new(num, den), subsystem(s), n, "test").unwrap();
    }
    l
}

fn brute_max(raw: &[RawCharge]) -> (Option<usize>, Eps) {
    let mut best = (None, Ratio::from_integer(0));
    for i in 0..100 {
        let total: Eps = raw
            .iter()
            .filter(|c| c.0 <= i && i <= c.0 + c.1)
            .map(|c| Ratio::new(c.2, c.3))
            .sum();
        if total > best.1 {
            best = (Some(i), total);
        }
    }
    best
}

proptest! {
    #[test]
    fn max_point_loss_matches_brute_force(raw in charges()) {
        let l = build(&raw);
        prop_assert_eq!(l.max_point_loss(Filter::All), brute_max(&raw));
        for i in 0..100 {
            let expect: Eps = raw.iter().filter(|c| c.0 <= i && i <= c.0 + c.1).map(|c| Ratio::new(c.2, c.3)).sum();
            prop_assert_eq!(l.point_loss(i, Filter::All), expect);
        }
    }

    #[test]
    fn order_of_charges_is_irrelevant(raw in charges().prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))) {
        let (a, b) = raw;
        let (la, lb) = (build(&a), build(&b));
        prop_assert_eq!(la.max_point_loss(Filter::All), lb.max_point_loss(Filter::All));
        prop_assert_eq!(la.assert_budget(), lb.assert_budget());
    }

    #[test]
    fn jsonl_round_trip(raw in charges()) {
        let l = build(&raw);
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        let mut back = Ledger::with_uniform_budget(Ratio::from_integer(1));
        back.read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back.charges(), l.charges());
    }
}
