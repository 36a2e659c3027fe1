use diffreason::fol::{parse_kb, PredicateSig};
use diffreason::grounding::{enumerate_bindings, herbrand_base, sample_batch, Binding, GroundAtom, Scene, TupleSampler, World};
use diffreason::Error;
use proptest::prelude::*;

fn scene(n: usize) -> Scene {
    Scene::new("s", vec![vec![0.0, 1.0]; n])
}

fn sig() -> Vec<PredicateSig> {
    vec![PredicateSig::new("a", 1), PredicateSig::new("b", 1), PredicateSig::new("r", 2)]
}

#[test]
fn base_size_is_sum_of_powers() {
    assert_eq!(herbrand_base(&scene(3), &sig()).len(), 2 * 3 + 9);
    assert!(herbrand_base(&scene(0), &sig()).is_empty());
    assert_eq!(herbrand_base(&scene(1), &[PredicateSig::new("p", 1)]).len(), 1);
}

#[test]
fn base_order_is_predicate_then_lexicographic() {
    let base = herbrand_base(&scene(2), &sig());
    let atoms: Vec<GroundAtom> = base.atoms().collect();
    let expected = [
        (0, vec![0]),
        (0, vec![1]),
        (1, vec![0]),
        (1, vec![1]),
        (2, vec![0, 0]),
        (2, vec![0, 1]),
        (2, vec![1, 0]),
        (2, vec![1, 1]),
    ];
    assert_eq!(atoms.len(), expected.len());
    for (i, (a, (p, args))) in atoms.iter().zip(expected).enumerate() {
        assert_eq!((a.pred, &a.args), (p, &args));
        assert_eq!(base.index(p, &args), Some(i));
        assert_eq!(base.atom(i).as_ref(), Some(a));
    }
    assert_eq!(base.index(2, &[2, 0]), None);
    assert_eq!(base.pred_range(2), 4..8);
}

#[test]
fn pairs_over_two_objects() {
    let kb = parse_kb("pred r/2; forall x, y: r(x, y)").unwrap();
    let got: Vec<Binding> = enumerate_bindings(&kb.formulas[0], &scene(2)).collect();
    let want: Vec<Binding> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|b| Binding(b.to_vec())).collect();
    assert_eq!(got, want);
    assert_eq!(enumerate_bindings(&kb.formulas[0], &scene(0)).count(), 0);
    let unary = parse_kb("pred p/1; forall x: p(x)").unwrap();
    assert_eq!(enumerate_bindings(&unary.formulas[0], &scene(1)).collect::<Vec<_>>(), vec![Binding(vec![0])]);
}

#[test]
fn binding_lookup_follows_prefix() {
    let vars = ["x".to_string(), "y".to_string()];
    let b = Binding(vec![3, 5]);
    assert_eq!(b.lookup(&vars, "y"), Some(5));
    assert_eq!(b.lookup(&vars, "z"), None);
}

#[test]
fn scene_check_rejects_ragged_features() {
    let s = Scene::new("bad", vec![vec![0.0, 1.0], vec![0.0]]);
    assert!(matches!(s.check(&sig(), 2), Err(Error::Dimension(_))));
    let labels = World::all_false(3);
    let s = scene(2).with_labels(labels);
    assert!(s.check(&sig(), 2).is_err(), "labels must cover the base exactly");
}

#[test]
fn sampler_is_deterministic() {
    let kb = parse_kb("pred r/2; pred p/1; forall x, y: r(x, y); forall x: p(x)").unwrap();
    let scenes = [scene(3), scene(5)];
    let a = sample_batch(&kb, &scenes, 200, 7).unwrap();
    let b = sample_batch(&kb, &scenes, 200, 7).unwrap();
    assert_eq!(a, b);
    let c = sample_batch(&kb, &scenes, 200, 8).unwrap();
    assert_ne!(a, c);
    assert!(sample_batch(&kb, &scenes, 0, 7).unwrap().is_empty());
}

#[test]
fn empty_universe_is_an_error() {
    let kb = parse_kb("pred p/1; forall x: p(x)").unwrap();
    assert!(matches!(sample_batch(&kb, &[scene(0)], 3, 0), Err(Error::EmptyUniverse)));
    assert!(matches!(sample_batch(&kb, &[], 3, 0), Err(Error::EmptyUniverse)));
}

#[test]
fn sampler_is_uniform_over_pairs() {
    // Chi-square goodness of fit against the uniform distribution on 4
    // cells; 16.27 is the 0.999 quantile with 3 degrees of freedom.
    let kb = parse_kb("pred r/2; forall x, y: r(x, y)").unwrap();
    let n = 100_000;
    let batch = sample_batch(&kb, &[scene(2)], n, 42).unwrap();
    let mut counts = [0usize; 4];
    for s in &batch {
        counts[s.binding.0[0] * 2 + s.binding.0[1]] += 1;
    }
    let expected = n as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    for c in counts {
        assert!((c as f64 / n as f64 - 0.25).abs() < 0.02);
    }
}

#[test]
fn pooled_universe_weights_scenes_by_tuple_count() {
    let kb = parse_kb("pred p/1; forall x: p(x)").unwrap();
    let scenes = [scene(1), scene(3)];
    let mut sampler = TupleSampler::new(&kb, &scenes, 3).unwrap();
    assert_eq!(sampler.universe_size(), 4);
    let batch = sampler.sample(40_000);
    let first = batch.iter().filter(|s| s.scene == 0).count() as f64 / 40_000.0;
    assert!((first - 0.25).abs() < 0.02, "{first}");
}

proptest! {
    #[test]
    fn binding_count_is_power(n in 0usize..6, k in 1usize..4) {
        let vars: Vec<String> = (0..k).map(|i| format!("v{i}")).collect();
        let args = vars.join(",");
        let kb = parse_kb(&format!("pred r/{k}; forall {args}: r({args})")).unwrap();
        let all: Vec<Binding> = enumerate_bindings(&kb.formulas[0], &scene(n)).collect();
        prop_assert_eq!(all.len(), n.pow(k as u32));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]), "lexicographic and distinct");
    }

    #[test]
    fn samples_belong_to_the_universe(sizes in prop::collection::vec(0usize..5, 1..4), seed in any::<u64>()) {
        prop_assume!(sizes.iter().any(|&n| n > 0));
        let kb = parse_kb("pred r/2; pred p/1; forall x, y: r(x, y) -> p(x); forall x: p(x)").unwrap();
        let scenes: Vec<Scene> = sizes.iter().map(|&n| scene(n)).collect();
        for s in sample_batch(&kb, &scenes, 50, seed).unwrap() {
            let f = &kb.formulas[s.formula];
            prop_assert!(enumerate_bindings(f, &scenes[s.scene]).any(|b| b == s.binding));
        }
    }

    #[test]
    fn base_indices_are_stable(n in 0usize..5) {
        let a: Vec<GroundAtom> = herbrand_base(&scene(n), &sig()).atoms().collect();
        let b: Vec<GroundAtom> = herbrand_base(&scene(n), &sig()).atoms().collect();
        prop_assert_eq!(&a, &b);
        let base = herbrand_base(&scene(n), &sig());
        for (i, atom) in a.iter().enumerate() {
            prop_assert_eq!(base.index(atom.pred, &atom.args), Some(i));
        }
    }
}
