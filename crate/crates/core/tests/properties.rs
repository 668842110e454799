use head::autodiff::Tape;
use head::data::{split_dataset, Domain, DomainDataset, Interaction, Interner, SplitSpec};
use head::evaluation::{hr_at_k, ndcg_at_k, RankedList};
use head::geometry::{
    constraint_residual, exp_origin, log_origin, lorentz_dist, lorentz_to_poincare, poincare_dist, TangentVec,
};
use head::model::scale_align;
use proptest::prelude::*;

fn tangent(max_norm: f64) -> impl Strategy<Value = Vec<f64>> {
    (1usize..12).prop_flat_map(move |d| {
        (prop::collection::vec(-1.0f64..1.0, d), 0.0..max_norm).prop_map(|(v, r)| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                v
            } else {
                v.iter().map(|x| x * r / n).collect()
            }
        })
    })
}

fn pair(max_norm: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(move |d| {
        let side = prop::collection::vec(-max_norm..max_norm, d);
        (side.clone(), side)
    })
}

proptest! {
    #[test]
    fn exp_then_log_recovers_the_tangent(v in tangent(5.0)) {
        let x = exp_origin(&TangentVec::from_space(&v));
        prop_assert!(constraint_residual(x.coords()) < 1e-9 * x.time().powi(2).max(1.0));
        let back = log_origin(&x);
        for (a, b) in back.space().iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn distance_is_symmetric_and_preserved_in_the_ball((u, v) in pair(1.5)) {
        let x = exp_origin(&TangentVec::from_space(&u));
        let y = exp_origin(&TangentVec::from_space(&v));
        let d = lorentz_dist(&x, &y).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - lorentz_dist(&y, &x).unwrap()).abs() < 1e-12);
        let p = poincare_dist(&lorentz_to_poincare(&x), &lorentz_to_poincare(&y)).unwrap();
        prop_assert!((p - d).abs() < 1e-6, "{p} vs {d}");
    }

    #[test]
    fn alignment_ignores_positive_rescaling(v in prop::collection::vec(-10.0f64..10.0, 1..20), c in 1e-3f64..1e3) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
        let mut tape = Tape::new();
        let a = tape.constant(v.clone(), vec![v.len()]);
        let b = tape.constant(v.iter().map(|x| x * c).collect(), vec![v.len()]);
        let (na, nb) = (scale_align(&mut tape, a).var, scale_align(&mut tape, b).var);
        let norm: f64 = tape.value(na).iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        for (x, y) in tape.value(na).iter().zip(tape.value(nb)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_bounded_and_ordered(rank in 1usize..200, k in 1usize..30) {
        let list = RankedList::with_rank(rank);
        let (n, h) = (ndcg_at_k(&list, k).unwrap(), hr_at_k(&list, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&n));
        prop_assert!(n <= h);
        prop_assert_eq!(h, if rank <= k { 1.0 } else { 0.0 });
    }

    #[test]
    fn split_partitions_every_interaction(n in 10usize..300, seed in any::<u64>()) {
        let mut users = Interner::default();
        let mut items = Interner::default();
        let interactions = (0..n)
            .map(|k| Interaction {
                user: users.intern(&format!("u{}", k % 17)),
                item: items.intern(&format!("i{k}")),
                rating: 1 + (k % 5) as u8,
                review: "text".into(),
                domain: Domain::Target,
            })
            .collect();
        let ds = DomainDataset::new(Domain::Target, users, items, interactions);
        let s = split_dataset(&ds, &SplitSpec::with_seed(seed)).unwrap();
        prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), n);
        let mut seen: Vec<String> = [&s.train, &s.valid, &s.test]
            .iter()
            .flat_map(|p| p.interactions.iter().map(|it| p.items.name(it.item).to_string()).collect::<Vec<_>>())
            .collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), n);
        prop_assert!((s.train.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
    }
}
