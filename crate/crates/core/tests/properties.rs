use std::collections::HashMap;

use bitvec::prelude::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scpir_core::placement::Bits;
use scpir_core::planner::ElementKind;
use scpir_core::runtime::{execute, run_retrieval_with};
use scpir_core::{
    build_query_plan, db_view, init_databases, run_retrieval, theoretical_cost, tradeoff_curve,
    verify_storage, Params, Placement, Rational, SecretPermutations,
};

fn random_messages(p: &Params, seed: u64) -> Vec<Bits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p.k)
        .map(|_| (0..p.message_len).map(|_| rng.random::<bool>()).collect())
        .collect()
}

fn configs(max_n: usize, max_k: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (1..=max_n).flat_map(move |n| (1..=max_k).flat_map(move |k| (1..=n).map(move |t| (n, k, t))))
}

#[test]
fn ledger_entries_are_consumed_by_every_other_holder() {
    for (n, k, t) in configs(6, 5).filter(|c| c.2 >= 2) {
        let p = Params::new(n, k, t).unwrap();
        let placement = Placement::build(&p).unwrap();
        for theta in 1..=k {
            let plan =
                build_query_plan(&placement, theta, &SecretPermutations::sample(&p, 1)).unwrap();
            let mut uses: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
            for (i, refs) in plan.decode_map.iter().enumerate() {
                for r in refs.iter().flatten() {
                    uses.entry((r.db, r.index)).or_default().push(i + 1);
                }
            }
            for (d, query) in plan.queries.iter().enumerate() {
                for (j, el) in query.iter().enumerate() {
                    let consumers = uses.remove(&(d + 1, j)).unwrap_or_default();
                    if el.kind == ElementKind::PureUndesired {
                        // Undesired sums from the last stage cannot exist.
                        assert!(el.stage < k, "({n},{k},{t}) stage-K undesired element");
                        let mut expect: Vec<usize> = el
                            .subset
                            .members()
                            .iter()
                            .copied()
                            .filter(|&m| m != d + 1)
                            .collect();
                        let mut got = consumers;
                        got.sort_unstable();
                        expect.sort_unstable();
                        assert_eq!(got, expect, "({n},{k},{t}) db {} element {j}", d + 1);
                    } else {
                        assert!(consumers.is_empty());
                    }
                }
            }
            assert!(uses.is_empty());
        }
    }
}

#[test]
fn desired_bits_partition_the_message_and_queries_are_legal() {
    for (n, k, t) in configs(6, 4) {
        let p = Params::new(n, k, t).unwrap();
        let placement = Placement::build(&p).unwrap();
        for theta in 1..=k {
            let plan =
                build_query_plan(&placement, theta, &SecretPermutations::sample(&p, 9)).unwrap();
            let mut hits = vec![0u32; p.message_len];
            for (i, query) in plan.queries.iter().enumerate() {
                for el in query {
                    assert!(el.subset.contains(i + 1));
                    let msgs: Vec<usize> = el.messages().collect();
                    let mut distinct = msgs.clone();
                    distinct.dedup();
                    assert_eq!(msgs, distinct, "one bit per distinct message");
                    assert_eq!(msgs.len(), el.stage);
                    assert_eq!(
                        el.kind == ElementKind::DesiredContaining,
                        msgs.contains(&theta)
                    );
                    for b in el.bits.iter().filter(|b| b.message == theta) {
                        hits[el.subset.rank() * p.sub_size + b.position] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&h| h == 1), "({n},{k},{t}) theta {theta}");
            let theta_counters =
                &plan.fresh_counters[(theta - 1) * p.sub_count..theta * p.sub_count];
            assert!(theta_counters.iter().all(|&c| c == p.sub_size));
        }
    }
}

#[test]
fn census_is_symmetric_under_random_permutations() {
    for (n, k, t) in configs(5, 4) {
        let p = Params::new(n, k, t).unwrap();
        let placement = Placement::build(&p).unwrap();
        for theta in 1..=k {
            let plan = build_query_plan(
                &placement,
                theta,
                &SecretPermutations::sample(&p, theta as u64),
            )
            .unwrap();
            for db in 1..=n {
                for ((_, messages), count) in plan.census(db) {
                    assert_eq!(count, ((t - 1) as u64).pow(messages.len() as u32 - 1));
                }
            }
        }
    }
}

#[test]
fn views_carry_the_same_fields_for_every_desired_index() {
    for (n, k, t) in [(3, 3, 2), (4, 3, 3), (4, 2, 1)] {
        let p = Params::new(n, k, t).unwrap();
        let placement = Placement::build(&p).unwrap();
        let id = SecretPermutations::identity(&p);
        let shape = |v: &serde_json::Value| -> Vec<Vec<String>> {
            v["elements"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| e.as_object().unwrap().keys().cloned().collect())
                .collect()
        };
        for db in 1..=n {
            let views: Vec<serde_json::Value> = (1..=k)
                .map(|theta| {
                    let plan = build_query_plan(&placement, theta, &id).unwrap();
                    serde_json::to_value(db_view(&plan, db).unwrap()).unwrap()
                })
                .collect();
            let top: Vec<&String> = views[0].as_object().unwrap().keys().collect();
            assert_eq!(top, ["db", "elements"]);
            for v in &views[1..] {
                assert_eq!(shape(v), shape(&views[0]));
            }
        }
    }
}

#[test]
fn plans_do_not_depend_on_message_contents() {
    let p = Params::new(4, 3, 2).unwrap();
    let placement = Placement::build(&p).unwrap();
    let perms = SecretPermutations::sample(&p, 17);
    let a = init_databases(&placement, &random_messages(&p, 1)).unwrap();
    let b = init_databases(&placement, &random_messages(&p, 2)).unwrap();
    let ea = execute(&placement, &a, 2, &perms).unwrap();
    let eb = execute(&placement, &b, 2, &perms).unwrap();
    assert_eq!(ea.views, eb.views);
    assert_eq!(ea.plan.decode_map, eb.plan.decode_map);
}

#[test]
fn answers_are_linear_in_the_messages() {
    for (n, k, t) in [(3, 2, 2), (4, 3, 2), (5, 3, 3), (4, 4, 1)] {
        let p = Params::new(n, k, t).unwrap();
        let placement = Placement::build(&p).unwrap();
        let perms = SecretPermutations::sample(&p, 3);
        let u = random_messages(&p, 10);
        let v = random_messages(&p, 11);
        let w: Vec<Bits> = u.iter().zip(&v).map(|(x, y)| x.clone() ^ y.clone()).collect();
        let run = |msgs: &[Bits]| {
            let stores = init_databases(&placement, msgs).unwrap();
            execute(&placement, &stores, 1, &perms).unwrap().answers
        };
        let (au, av, aw) = (run(&u), run(&v), run(&w));
        for db in 0..n {
            assert_eq!(aw.answers[db], au.answers[db].clone() ^ av.answers[db].clone());
        }
    }
}

#[test]
fn identical_inputs_give_identical_runs() {
    let p = Params::new(4, 3, 3).unwrap();
    let msgs = random_messages(&p, 5);
    let r1 = run_retrieval(&p, &msgs, 3, 77).unwrap();
    let r2 = run_retrieval(&p, &msgs, 3, 77).unwrap();
    assert_eq!(r1, r2);
    let placement = Placement::build(&p).unwrap();
    let stores = init_databases(&placement, &msgs).unwrap();
    let perms = SecretPermutations::sample(&p, 77);
    let e1 = execute(&placement, &stores, 3, &perms).unwrap();
    let e2 = execute(&placement, &stores, 3, &perms).unwrap();
    assert_eq!(e1.answers, e2.answers);
}

#[test]
fn permutation_sampling_is_uniform_over_joint_values() {
    // (2,2,2): one sub-message of 4 bits per message, so 24 * 24 = 576 joint
    // values. Index each joint value by enumeration and count hits.
    let p = Params::new(2, 2, 2).unwrap();
    let index_of = |perm: &[usize]| -> usize {
        // Lehmer code of a permutation of 0..4.
        let mut idx = 0;
        for i in 0..perm.len() {
            let smaller = perm[i + 1..].iter().filter(|&&x| x < perm[i]).count();
            idx = idx * (perm.len() - i) + smaller;
        }
        idx
    };
    let samples = 576 * 200;
    let mut counts = vec![0u32; 576];
    for seed in 0..samples as u64 {
        let perms = SecretPermutations::sample(&p, seed);
        let s = perms.as_slice();
        counts[index_of(&s[0]) * 24 + index_of(&s[1])] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0));
    let expected = 200.0;
    let chi: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 575 degrees of freedom: mean 575, sd about 34.
    assert!(chi < 575.0 + 6.0 * 34.0, "chi-square {chi}");
}

#[test]
fn storage_identity_holds_for_the_wide_sweep() {
    for (n, k, t) in configs(8, 5) {
        let p = Params::new(n, k, t).unwrap();
        let rep = verify_storage(&Placement::build(&p).unwrap()).unwrap();
        // Both closed forms evaluated directly.
        let c = |a: u64, b: u64| -> u64 {
            (0..b).fold(1u64, |acc, i| acc * (a - i) / (i + 1))
        };
        let left = k as u64 * c(n as u64 - 1, t as u64 - 1) * (t as u64).pow(k as u32);
        let l = c(n as u64, t as u64) * (t as u64).pow(k as u32);
        assert_eq!(left * n as u64, t as u64 * k as u64 * l);
        assert!(rep.counted_per_db.iter().all(|&b| b == left));
        assert!(p.mu >= Rational::new(1, n as i128).unwrap() && p.mu <= Rational::ONE);
    }
}

#[test]
fn every_message_bit_is_held_somewhere() {
    for (n, k, t) in configs(5, 3) {
        let p = Params::new(n, k, t).unwrap();
        let placement = Placement::build(&p).unwrap();
        let msgs = random_messages(&p, 8);
        let stores = init_databases(&placement, &msgs).unwrap();
        for (m, msg) in msgs.iter().enumerate() {
            let mut rebuilt = bitvec![u8, Lsb0; 0; p.message_len];
            for s in placement.subsets() {
                let holder = &stores[s.members()[0] - 1];
                let part = holder.get(m + 1, s.rank()).unwrap();
                rebuilt[s.rank() * p.sub_size..(s.rank() + 1) * p.sub_size]
                    .copy_from_bitslice(part);
                for &other in &s.members()[1..] {
                    assert_eq!(stores[other - 1].get(m + 1, s.rank()), Some(part));
                }
            }
            assert_eq!(&rebuilt, msg);
        }
    }
}

#[test]
fn achieved_points_are_convex() {
    for n in 1..=8 {
        for k in 1..=6 {
            let curve = tradeoff_curve(n, k).unwrap();
            let slopes: Vec<Rational> = curve
                .windows(2)
                .map(|w| {
                    w[1].cost
                        .checked_sub(w[0].cost)
                        .unwrap()
                        .checked_div(w[1].mu.checked_sub(w[0].mu).unwrap())
                        .unwrap()
                })
                .collect();
            assert!(slopes.windows(2).all(|s| s[0] <= s[1]), "({n},{k})");
            assert!(curve.iter().all(|p| p.on_hull));
            assert_eq!(curve.last().unwrap().cost, theoretical_cost(n, k).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retrieval_is_exact_for_random_instances(
        n in 1usize..=5, k in 1usize..=4, t_frac in 0.0f64..1.0, theta_frac in 0.0f64..1.0,
        seed in any::<u64>(), msg_seed in any::<u64>()
    ) {
        let t = 1 + ((n as f64 * t_frac) as usize).min(n - 1);
        let theta = 1 + ((k as f64 * theta_frac) as usize).min(k - 1);
        let p = Params::new(n, k, t).unwrap();
        let msgs = random_messages(&p, msg_seed);
        let rep = run_retrieval_with(&p, &msgs, theta, &SecretPermutations::sample(&p, seed)).unwrap();
        prop_assert_eq!(&rep.decoded, &msgs[theta - 1]);
        prop_assert_eq!(rep.cost, theoretical_cost(t, k).unwrap());
    }
}
