use funnel_hoi::dataset_eval::{rarity_order, zs_split, HoiClass, SplitLists, SplitSetting, Taxonomy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::collections::BTreeSet;

const UNSEEN_OBJECTS: [usize; 12] = [3, 9, 14, 21, 27, 33, 40, 46, 52, 61, 68, 75];

/// 80 objects, 117 verbs, 600 classes and 138 rare ones. The twelve listed
/// objects own exactly 100 classes between them.
fn full_scale() -> Taxonomy {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(600);
    let mut pairs = BTreeSet::new();
    for (i, &o) in UNSEEN_OBJECTS.iter().enumerate() {
        let want = if i < 4 { 9 } else { 8 };
        let mut n = 0;
        while n < want {
            n += pairs.insert((rng.gen_range(0..117), o)) as usize;
        }
    }
    let others: Vec<usize> = (0..80).filter(|o| !UNSEEN_OBJECTS.contains(o)).collect();
    while pairs.len() < 600 {
        pairs.insert((rng.gen_range(0..117), *others.choose(&mut rng).unwrap()));
    }
    let mut hoi_classes: Vec<HoiClass> = pairs
        .into_iter()
        .map(|(action_idx, object_idx)| HoiClass { action_idx, object_idx })
        .collect();
    hoi_classes.shuffle(&mut rng);
    let mut frequency: Vec<u32> = (0..600).map(|i| if i < 138 { rng.gen_range(1..10) } else { rng.gen_range(10..5000) }).collect();
    frequency.shuffle(&mut rng);
    Taxonomy {
        objects: (0..80).map(|i| format!("object{i}")).collect(),
        actions: (0..117).map(|i| format!("verb{i}")).collect(),
        rare: frequency.iter().map(|&f| f < 10).collect(),
        hoi_classes,
        person_object_idx: 0,
        frequency: Some(frequency),
    }
}

fn verb_list(seed: u64, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..117).collect();
    v.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    v.truncate(n);
    v
}

fn assert_partition(tax: &Taxonomy, seen: &[usize], unseen: &[usize]) {
    let mut all: Vec<usize> = seen.iter().chain(unseen).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..tax.n_classes()).collect::<Vec<_>>());
}

#[test]
fn fixture_matches_reference_counts() {
    let t = full_scale();
    t.validate().unwrap();
    assert_eq!(t.rare.iter().filter(|&&r| r).count(), 138);
    let owned: usize = UNSEEN_OBJECTS.iter().map(|&o| t.classes_of_object(o).len()).sum();
    assert_eq!(owned, 100);
}

#[test]
fn class_level_settings_hold_out_120() {
    let t = full_scale();
    let freq = t.frequency.clone().unwrap();
    let rare_prefix: BTreeSet<usize> = rarity_order(&freq)[..138].iter().copied().collect();
    let rare: BTreeSet<usize> = (0..600).filter(|&c| t.rare[c]).collect();
    assert_eq!(rare_prefix, rare);
    for setting in [SplitSetting::Uc, SplitSetting::RfUc, SplitSetting::NfUc] {
        for seed in 0..5 {
            let s = zs_split(&t, setting, seed, &SplitLists::default()).unwrap();
            assert_eq!((s.n_seen(), s.n_unseen()), (480, 120), "{setting}");
            assert_partition(&t, &s.seen, &s.unseen);
            match setting {
                SplitSetting::RfUc => assert!(s.unseen.iter().all(|c| rare.contains(c))),
                SplitSetting::NfUc => {
                    let lo = s.unseen.iter().map(|&c| freq[c]).min().unwrap();
                    assert!(s.seen.iter().all(|&c| freq[c] <= lo));
                }
                _ => {}
            }
        }
    }
    let a = zs_split(&t, SplitSetting::Uc, 0, &SplitLists::default()).unwrap();
    let b = zs_split(&t, SplitSetting::Uc, 1, &SplitLists::default()).unwrap();
    assert_ne!(a.unseen, b.unseen);
}

#[test]
fn unseen_objects_take_all_their_classes() {
    let t = full_scale();
    let lists = SplitLists { unseen_objects: Some(UNSEEN_OBJECTS.to_vec()), unseen_actions: None };
    let s = zs_split(&t, SplitSetting::Uo, 0, &lists).unwrap();
    assert_eq!((s.n_seen(), s.n_unseen()), (500, 100));
    assert_partition(&t, &s.seen, &s.unseen);
    assert_eq!(s.unseen_objects, UNSEEN_OBJECTS.to_vec());
    for &c in &s.unseen {
        assert!(UNSEEN_OBJECTS.contains(&t.hoi_classes[c].object_idx));
    }
}

#[test]
fn unseen_verbs_take_all_their_classes() {
    let t = full_scale();
    for (setting, n) in [(SplitSetting::Ua, 22), (SplitSetting::Uv, 20)] {
        let verbs = verb_list(n as u64, n);
        let lists = SplitLists { unseen_objects: None, unseen_actions: Some(verbs.clone()) };
        let s = zs_split(&t, setting, 0, &lists).unwrap();
        assert_eq!(s.unseen_actions.len(), n);
        assert_partition(&t, &s.seen, &s.unseen);
        let expected: Vec<usize> = (0..600).filter(|&c| verbs.contains(&t.hoi_classes[c].action_idx)).collect();
        assert_eq!(s.unseen, expected);
    }
}

#[test]
fn bad_lists_are_rejected() {
    let t = full_scale();
    let dup = SplitLists { unseen_objects: Some(vec![3, 3]), unseen_actions: None };
    assert!(zs_split(&t, SplitSetting::Uo, 0, &dup).is_err());
    let far = SplitLists { unseen_objects: None, unseen_actions: Some(vec![117]) };
    assert!(zs_split(&t, SplitSetting::Ua, 0, &far).is_err());
    let mut bare = t.clone();
    bare.frequency = None;
    assert!(zs_split(&bare, SplitSetting::RfUc, 0, &SplitLists::default()).is_err());
}
