use head::data::{sample_negative, seeded_rng, Domain, DomainDataset, Interaction, Interner};
use head::evaluation::hierarchy::spearman;
use head::evaluation::synthetic::{power_law_cdf, Benchmark};
use head::evaluation::{generate_synthetic, RankedList, RankingMetrics, SyntheticSpec, TOP_K};
use head::training::{fit, TrainConfig};
use head::objectives::LossWeights;
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn dataset(rows: &[(&str, &str, u8)]) -> DomainDataset {
    let mut users = Interner::default();
    let mut items = Interner::default();
    let interactions = rows
        .iter()
        .map(|&(u, i, rating)| Interaction {
            user: users.intern(u),
            item: items.intern(i),
            rating,
            review: "fine".into(),
            domain: Domain::Target,
        })
        .collect();
    DomainDataset::new(Domain::Target, users, items, interactions)
}

#[test]
fn negatives_without_low_ratings_are_uniform_over_untouched_items() {
    let names: Vec<String> = (1..=10).map(|k| format!("i{k}")).collect();
    let mut rows = vec![("u", "i0", 5)];
    rows.extend(names.iter().map(|n| ("v", n.as_str(), 4)));
    let ds = dataset(&rows);
    let u = ds.users.get("u").unwrap();
    let positive = ds.items.get("i0").unwrap();
    let mut counts = [0usize; 11];
    let mut rng = seeded_rng(11);
    let draws = 10_000;
    for _ in 0..draws {
        counts[sample_negative(&ds, u, positive, &mut rng).unwrap()] += 1;
    }
    assert_eq!(counts[positive], 0);
    let expected = draws as f64 / 10.0;
    let stat: f64 = (0..11)
        .filter(|&i| i != positive)
        .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat} p={p}");
}

#[test]
fn degree_of_a_seven_review_user_is_seven() {
    let items: Vec<String> = (0..7).map(|k| format!("i{k}")).collect();
    let mut rows: Vec<(&str, &str, u8)> = items.iter().map(|i| ("u", i.as_str(), 4)).collect();
    rows.push(("w", "i0", 2));
    let ds = dataset(&rows);
    assert_eq!(ds.user_degree(ds.users.get("u").unwrap()), 7);
    assert_eq!(ds.item_degree(ds.items.get("i0").unwrap()), 2);
}

#[test]
fn generated_item_degrees_follow_the_power_law() {
    let spec = SyntheticSpec {
        items: [2000, 2000],
        ..SyntheticSpec::desk(5)
    };
    let (_, target) = generate_synthetic(&spec).unwrap();
    let mut degrees: Vec<u32> = target.item_degrees().to_vec();
    degrees.sort_unstable();
    let n = degrees.len() as f64;
    let (lo, hi) = (spec.min_degree, spec.degree_cap(Domain::Target));
    let mut ks: f64 = 0.0;
    for d in lo..=hi {
        let empirical = degrees.partition_point(|&x| x <= d) as f64 / n;
        ks = ks.max((empirical - power_law_cdf(d, spec.exponent, lo, hi)).abs());
    }
    // One-sample KS critical value at the 1% level.
    assert!(ks < 1.63 / n.sqrt(), "KS statistic {ks}");
}

#[test]
fn scores_equal_to_true_ranks_give_perfect_metrics() {
    let mut rng = seeded_rng(2);
    let lists: Vec<RankedList> = (0..50)
        .map(|_| {
            let candidates: Vec<usize> = (0..100).collect();
            let positive = rng.random_range(0..100);
            let scores: Vec<f64> = candidates.iter().map(|&c| if c == positive { 0.0 } else { 1.0 + c as f64 }).collect();
            RankedList::from_scores(&candidates, &scores, positive).unwrap()
        })
        .collect();
    let m = RankingMetrics::from_lists(&lists, TOP_K).unwrap();
    assert_eq!((m.ndcg, m.hr, m.lists), (1.0, 1.0, 50));
}

#[test]
fn random_radii_are_uncorrelated_with_degree() {
    for seed in 0..20 {
        let mut rng = seeded_rng(seed);
        let radii: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let degrees: Vec<f64> = (0..1000).map(|_| rng.random_range(1..60) as f64).collect();
        let rho = spearman(&radii, &degrees).unwrap();
        assert!(rho.abs() < 0.1, "seed {seed}: rho {rho}");
    }
}

#[test]
fn training_beats_initialization_on_validation() {
    for seed in 1..=3 {
        let bench = Benchmark::build(&SyntheticSpec::desk(seed), 16).unwrap();
        let config = TrainConfig {
            seed,
            batch_size: 16,
            filters_per_width: 8,
            doc_cap: 32,
            max_iters: 500,
            ..TrainConfig::default()
        };
        let r = fit(&bench.data(), &config, &LossWeights::default()).unwrap();
        assert!(r.best_ndcg > r.initial_ndcg, "seed {seed}: {} vs {}", r.best_ndcg, r.initial_ndcg);
    }
}
