#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use manchors::models::{BuiltinModel, ConjunctionRule};
use manchors::{Instance, Label, Predicate, Rule};

/// Random first-match rule list over `n` slots of cardinality `card`, and a
/// random instance to explain.
pub fn random_conjunction_model(seed: u64, n: usize, card: u32) -> (BuiltinModel, Instance) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rules = rng.random_range(1..=4);
    let rules = (0..n_rules)
        .map(|_| {
            let len = rng.random_range(1..=n.min(3));
            let mut slots: Vec<usize> = (0..n).collect();
            for i in 0..len {
                let j = rng.random_range(i..n);
                slots.swap(i, j);
            }
            let rule = Rule::from_predicates(slots[..len].iter().map(|&s| Predicate::new(s, rng.random_range(0..card))))
                .unwrap();
            ConjunctionRule { rule, label: Label(rng.random_range(0..2)) }
        })
        .collect();
    let model = BuiltinModel::ConjunctionList { rules, default: Label(rng.random_range(0..2)), arity: Some(n) };
    let x = Instance::new((0..n).map(|_| rng.random_range(0..card)).collect());
    (model, x)
}
