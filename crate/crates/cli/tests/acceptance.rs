//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line to
//! stderr (outside the test harness capture) and the test fails if any
//! criterion does.

use funnel_hoi::coattention::{coattend_candidate, ovaca, probe_values, CoAttentionParams};
use funnel_hoi::dataset_eval::rng::{gaussian, seeded, SeededRng, Stream};
use funnel_hoi::dataset_eval::{
    average_precision, decode_scenes, encode_scenes, hoi_map, iou, zs_split, BBox, Dataset, DatasetConfig, Detection,
    HoiClass, Interaction, SplitLists, SplitSetting, Taxonomy,
};
use funnel_hoi::detr_lite::{decode_checkpoint, encode_checkpoint, PredictionVars, Predictions};
use funnel_hoi::matching_losses::{
    beta_value, focal_loss, gt_targets, hungarian, omega, ordis_loss, scene_context, scene_loss, LossConfig, Normalizers,
    Weighting,
};
use funnel_hoi::nominators::{action_scene_scores, nominate, nominate_actions, nominate_objects, related_verbs, NominationConfig};
use funnel_hoi::numerics::{Graph, Tensor};
use funnel_hoi::semantics::{load_table, over_matrix, save_table, EmbeddingTable};
use funnel_hoi_cli::run;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

type Check = std::result::Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Runs the CLI in-process; returns the exit code and the JSON log lines.
fn cli(args: &[&str]) -> (i32, Vec<Value>, String) {
    let mut argv = vec!["funnel-hoi"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    let logs = String::from_utf8(out)
        .unwrap()
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect();
    (code, logs, String::from_utf8(err).unwrap())
}

fn cli_ok(args: &[&str]) -> std::result::Result<Vec<Value>, String> {
    let (code, logs, err) = cli(args);
    ensure(code == 0, || format!("`{}` exited {code}: {err}", args.join(" ")))?;
    Ok(logs)
}

fn event<'a>(logs: &'a [Value], name: &str) -> std::result::Result<&'a Value, String> {
    logs.iter()
        .rev()
        .find(|v| v["event"] == name)
        .ok_or_else(|| format!("no `{name}` event"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let logs = cli_ok(&["gradcheck", "--profile", "toy", "--tol", "1e-4"])?;
    let secs = start.elapsed().as_secs_f64();
    let g = event(&logs, "gradcheck")?;
    let err = g["max_rel_err"].as_f64().unwrap();
    ensure(g["passed"] == true && err <= 1e-4, || format!("max relative error {err:.3e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} tensors, {} scalars, max rel err {err:.2e}, {secs:.1} s",
        g["tensors"], g["scalars"]
    ))
}

fn brute_force_total(cost: &Tensor) -> f64 {
    fn rec(cost: &Tensor, gt: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if gt == cost.cols() {
            *best = best.min(acc);
            return;
        }
        for s in 0..cost.rows() {
            if !used[s] {
                used[s] = true;
                rec(cost, gt + 1, used, acc + cost.at(s, gt), best);
                used[s] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    best
}

fn hungarian_optimality() -> Check {
    let mut r = rng(2);
    for case in 0..500 {
        let g = r.gen_range(1..=7);
        let n_q = r.gen_range(g..=8);
        let data = (0..n_q * g).map(|_| r.gen_range(-5.0..5.0)).collect();
        let cost = Tensor::new(&[n_q, g], data).map_err(|e| e.to_string())?;
        let m = hungarian(&cost).map_err(|e| e.to_string())?;
        let want = brute_force_total(&cost);
        let got: f64 = m.pairs.iter().map(|&(s, gt)| cost.at(s, gt)).sum();
        ensure(m.total == want && got == want, || format!("case {case}: {} vs {want}", m.total))?;
    }
    Ok("500/500 totals equal the permutation minimum".into())
}

const BETA_MAX: f64 = 64.472_382_603_833_28;

/// σ(−x): the headroom left below one, which bounds how small a step in x
/// can still move Ω in f64.
fn headroom(x: f64) -> f64 {
    1.0 / (1.0 + x.exp())
}

fn actuator_properties() -> Check {
    let mut r = rng(3);
    let eps2 = 1e-7;
    let x_of = |b: f64, d: f64, z: f64| b * z / (2.0 + d + eps2);
    let (mut strict_z, mut strict_d, mut neutral) = (0usize, 0usize, 0usize);
    for i in 0..100_000 {
        let beta = match i % 20 {
            0 => 0.0,
            _ => r.gen_range(0.0..=BETA_MAX),
        };
        let delta = r.gen_range(-1.0..=1.0);
        let zeta = if i % 20 == 1 { 0.0 } else { r.gen_range(-1.0..=1.0) };
        let w = omega(beta, delta, zeta, eps2);
        ensure(w > 0.0 && w < 1.0, || format!("Ω={w} at β={beta} δ={delta} ζ={zeta}"))?;
        if beta * zeta == 0.0 {
            neutral += 1;
            ensure(w == 0.5, || format!("Ω={w} with β·ζ=0"))?;
            continue;
        }
        // ζ step
        let z2 = zeta + r.gen_range(1e-6..=0.5);
        let w2 = omega(beta, delta, z2, eps2);
        let (x1, x2) = (x_of(beta, delta, zeta), x_of(beta, delta, z2));
        if headroom(x1.max(x2)) * (x2 - x1) >= 1e-14 {
            strict_z += 1;
            ensure(w2 > w, || format!("Ω not increasing in ζ at β={beta} δ={delta} ζ={zeta}→{z2}"))?;
        } else {
            ensure(w2 >= w, || format!("Ω decreased in ζ at β={beta} δ={delta} ζ={zeta}→{z2}"))?;
        }
        // δ step at positive ζ
        let zp = zeta.abs();
        let d2 = (delta + r.gen_range(1e-6..=0.5)).min(1.0);
        if d2 > delta {
            let a = (omega(beta, delta, zp, eps2) - 0.5).abs();
            let b = (omega(beta, d2, zp, eps2) - 0.5).abs();
            let (y1, y2) = (x_of(beta, delta, zp), x_of(beta, d2, zp));
            if headroom(y1) * (y1 - y2) >= 1e-14 {
                strict_d += 1;
                ensure(b < a, || format!("|Ω-0.5| not decreasing in δ at β={beta} ζ={zp} δ={delta}→{d2}"))?;
            } else {
                ensure(b <= a, || format!("|Ω-0.5| grew with δ at β={beta} ζ={zp} δ={delta}→{d2}"))?;
            }
        }
    }
    let focal = unit_actuator_is_focal()?;
    Ok(format!(
        "1e5 triples in (0,1); {neutral} neutral at 0.5; strict in ζ on {strict_z}, in δ on {strict_d} resolvable pairs, monotone elsewhere; Ω≡1 focal gap {focal:.1e}"
    ))
}

fn focal_oracle(x: f64, t: f64, alpha: f64, gamma: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    if t > 0.5 {
        alpha * (1.0 - p).powf(gamma) * -p.ln()
    } else {
        (1.0 - alpha) * p.powf(gamma) * -(1.0 - p).ln()
    }
}

fn unit_actuator_is_focal() -> std::result::Result<f64, String> {
    let e = |e: funnel_hoi::Error| e.to_string();
    let ds = Dataset::generate(&DatasetConfig::default()).map_err(e)?;
    let over = over_matrix(&ds.objects, &ds.actions).map_err(e)?;
    let n_classes = ds.taxonomy.n_classes();
    let seen = ds.split.seen_mask(n_classes);
    let mut columns = vec![None; n_classes];
    for (j, &c) in ds.split.seen.iter().enumerate() {
        columns[c] = Some(j);
    }
    let cfg = LossConfig::default();
    let mut r = rng(4);
    let (n_q, w, n_obj) = (8, ds.split.n_seen(), ds.taxonomy.n_objects());
    let mut worst = 0.0f64;
    for scene in ds.train.iter().take(25) {
        let mut rand_t = |rows: usize, cols: usize, lo: f64, hi: f64| {
            Tensor::new(&[rows, cols], (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
        };
        let preds = Predictions {
            hoi_logits: rand_t(n_q, w, -5.0, 5.0),
            obj_logits: rand_t(n_q, n_obj + 1, -2.0, 2.0),
            human_box: rand_t(n_q, 4, 0.2, 0.6),
            object_box: rand_t(n_q, 4, 0.2, 0.6),
        };
        let gts = gt_targets(&scene.gts, &ds.taxonomy, &columns).map_err(e)?;
        let ctx = scene_context(&preds, gts, &over, &ds.taxonomy, &seen, &ds.split.seen, Weighting::Focal, &cfg)
            .map_err(e)?;
        ensure(ctx.factors.omega.data().iter().all(|&x| x == 1.0), || "Ω not identically 1".into())?;
        let mut g = Graph::new();
        let pv = PredictionVars {
            hoi_logits: g.constant(preds.hoi_logits.clone()),
            obj_logits: g.constant(preds.obj_logits.clone()),
            human_box: g.constant(preds.human_box.clone()),
            object_box: g.constant(preds.object_box.clone()),
        };
        let n_gt = scene.gts.len();
        let norm = Normalizers::for_batch(&[n_gt], n_q, cfg.no_object_weight).map_err(e)?;
        let lv = scene_loss(&mut g, &pv, &ctx, &norm, n_obj, &cfg).map_err(e)?;
        let want: f64 = preds
            .hoi_logits
            .data()
            .iter()
            .zip(ctx.targets.data())
            .map(|(&x, &t)| focal_oracle(x, t, cfg.alpha, cfg.gamma))
            .sum::<f64>()
            / n_gt as f64;
        let fl = focal_loss(&preds.hoi_logits, &ctx.targets, cfg.alpha, cfg.gamma).map_err(e)?;
        let direct = ordis_loss(&fl, &ctx.factors.omega, n_gt).map_err(e)?;
        worst = worst.max((g.value(lv.l_ordis).data()[0] - want).abs()).max((direct - want).abs());
    }
    ensure(worst <= 1e-12, || format!("Ω≡1 loss differs from focal loss by {worst:.3e}"))?;
    Ok(worst)
}

fn factor_constants() -> Check {
    let b1 = beta_value(1.0, 2.0, 1e-14);
    ensure((b1 - std::f64::consts::LN_2).abs() <= 1e-12, || format!("β(1) = {b1}"))?;
    let cap = (1e28f64).ln_1p();
    ensure((cap - BETA_MAX).abs() < 1e-12, || format!("cap {cap}"))?;
    let b0 = beta_value(0.0, 2.0, 1e-14);
    ensure(b0 == cap, || format!("β(0) = {b0}"))?;
    let mut prev = 0.0;
    for k in 0..=60 {
        let b = beta_value(10f64.powf(-k as f64 / 3.0), 2.0, 1e-14);
        ensure(b >= prev && b <= cap, || format!("β not rising to the cap at 10^-{k}/3"))?;
        prev = b;
    }
    Ok(format!("β(1)={b1:.15}, β(0)={b0:.11}"))
}

/// Vectors over a small alphabet half the time, so tied scores are common.
fn table(r: &mut Xoshiro256PlusPlus, n: usize, d: usize, prefix: &str) -> EmbeddingTable {
    let coarse = r.gen_bool(0.5);
    let vectors = (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..d)
                .map(|_| if coarse { r.gen_range(-1..=1) as f64 } else { r.gen_range(-1.0..1.0) })
                .collect();
            if v.iter().any(|&x| x != 0.0) {
                break v;
            }
        })
        .collect();
    EmbeddingTable::new((0..n).map(|i| format!("{prefix}{i}")).collect(), vectors).unwrap()
}

fn unit(r: &mut Xoshiro256PlusPlus, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Full sort by score, ties to the lower index, then truncate.
fn full_sort(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<usize> {
    scored.sort_by(|a, b| {
        if a.1 == b.1 {
            a.0.cmp(&b.0)
        } else {
            b.1.partial_cmp(&a.1).unwrap()
        }
    });
    scored.into_iter().take(k).map(|s| s.0).collect()
}

fn nominator_correctness() -> Check {
    let e = |e: funnel_hoi::Error| e.to_string();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut r = rng(5);
    for case in 0..1000 {
        let n = r.gen_range(3..14);
        let m = r.gen_range(2..12);
        let d = 2 * r.gen_range(1..5);
        let objects = table(&mut r, n, d, "o");
        let actions = table(&mut r, m, d, "a");
        let over = over_matrix(&objects, &actions).map_err(e)?;
        let v = unit(&mut r, d);
        let person = r.gen_range(0..n);
        let k_o = r.gen_range(1..n);
        let nom = nominate_objects(&objects, &v, k_o, person).map_err(e)?;
        let scored = (0..n).filter(|&i| i != person).map(|i| (i, dot(objects.vector(i), &v))).collect();
        ensure(nom.nominated() == full_sort(scored, k_o).as_slice(), || format!("object case {case}"))?;
        ensure(nom.indices.contains(&person) && !nom.nominated().contains(&person), || format!("person, case {case}"))?;

        let k = r.gen_range(1..=m);
        let related = related_verbs(&over, nom.nominated(), k).map_err(e)?;
        for (row, &o) in related.iter().zip(nom.nominated()) {
            let want = full_sort((0..m).map(|a| (a, over.get(o, a))).collect(), k);
            ensure(row == &want, || format!("related verbs, case {case}"))?;
        }
        let scores = action_scene_scores(&nom, &related, &actions, &v).map_err(e)?;
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for (p, row) in related.iter().enumerate() {
            for &a in row {
                let sc = nom.scores[p].exp() * dot(actions.vector(a), &v);
                let entry = best.entry(a).or_insert(sc);
                *entry = entry.max(sc);
            }
        }
        let k_a = r.gen_range(1..=best.len());
        let got = nominate_actions(&scores, &related, nom.nominated(), k_a).map_err(e)?;
        let want = full_sort(best.into_iter().collect(), k_a);
        ensure(got.indices == want, || format!("verb case {case}: {:?} vs {want:?}", got.indices))?;
    }

    let ds = Dataset::generate(&DatasetConfig { sigma: 0.0, ..DatasetConfig::default() }).map_err(e)?;
    let over = over_matrix(&ds.objects, &ds.actions).map_err(e)?;
    let nc = NominationConfig { k_o: 5, k_a: 5, k: 10, person_idx: ds.taxonomy.person_object_idx };
    let (mut hit, mut total) = (0, 0);
    for scene in &ds.train {
        let nom = nominate(&ds.objects, &ds.actions, &over, scene.v_c.data(), nc).map_err(e)?;
        ensure(nom.objects.indices.contains(&nc.person_idx), || "person missing".into())?;
        for g in &scene.gts {
            total += 1;
            hit += nom.objects.indices.contains(&ds.taxonomy.hoi_classes[g.class].object_idx) as usize;
        }
    }
    ensure(hit == total, || format!("σ=0 object recall@5 {hit}/{total}"))?;
    Ok(format!(
        "1000/1000 object and verb instances match the full sort; σ=0 recall@5 {hit}/{total} over {} scenes",
        ds.train.len()
    ))
}

fn rand_t(r: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| gaussian(r)).collect()).unwrap()
}

fn coattention_invariants() -> Check {
    let e = |e: funnel_hoi::Error| e.to_string();
    let mut shuffler = rng(6);
    let mut worst_row = 0.0f64;
    for seed in 0..100 {
        let mut r = seeded(seed, Stream::Params);
        let (c1, c2, l) = (16, 8, 16);
        let osaca_p = CoAttentionParams::init(c1, c2, &mut r).map_err(e)?;
        let ovaca_p = CoAttentionParams::init(c1, c2, &mut r).map_err(e)?;
        let (vb, vc) = (rand_t(&mut r, c1, l), rand_t(&mut r, c1, 2));
        let n = 1 + seed as usize % 6;
        let cands: Vec<Tensor> = (0..n).map(|_| rand_t(&mut r, c1, 2)).collect();
        let mut perm = cands.clone();
        perm.shuffle(&mut shuffler);
        let f_o = probe_values(&vb, &vc, &cands, &osaca_p).map_err(e)?;
        let f_o2 = probe_values(&vb, &vc, &perm, &osaca_p).map_err(e)?;
        ensure(f_o.map.data() == f_o2.map.data(), || format!("F_o changed under permutation, seed {seed}"))?;

        let verbs: Vec<Tensor> = (0..5).map(|_| rand_t(&mut r, c1, 2)).collect();
        let mut vperm = verbs.clone();
        vperm.shuffle(&mut shuffler);
        let f_a = |list: &[Tensor]| -> std::result::Result<Vec<f64>, String> {
            let mut g = Graph::new();
            let w = ovaca_p.bind_frozen(&mut g);
            let (b, c, o) = (g.constant(vb.clone()), g.constant(vc.clone()), g.constant(f_o.map.clone()));
            let vs: Vec<_> = list.iter().map(|t| g.constant(t.clone())).collect();
            let p = ovaca(&mut g, b, o, c, &vs, &w).map_err(e)?;
            Ok(g.value(p.map).data().to_vec())
        };
        ensure(f_a(&verbs)? == f_a(&vperm)?, || format!("F_a changed under permutation, seed {seed}"))?;

        let mut g = Graph::new();
        let w = osaca_p.bind_frozen(&mut g);
        let (b, c, k) = (g.constant(vb.clone()), g.constant(vc.clone()), g.constant(cands[0].clone()));
        let maps = coattend_candidate(&mut g, b, c, k, &w).map_err(e)?;
        for f in [maps.f1, maps.f2] {
            let t = g.value(f);
            for row in 0..t.rows() {
                worst_row = worst_row.max((t.row(row).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst_row <= 1e-12, || format!("softmax row sum off by {worst_row:.3e}"))?;
    let mut r = seeded(99, Stream::Params);
    let zero = CoAttentionParams::zeros(16, 8).map_err(e)?;
    let cands: Vec<Tensor> = (0..4).map(|_| rand_t(&mut r, 16, 2)).collect();
    let z = probe_values(&rand_t(&mut r, 16, 16), &rand_t(&mut r, 16, 2), &cands, &zero).map_err(e)?;
    ensure(z.map.data().iter().all(|&x| x == 0.0), || "zero weights gave a nonzero map".into())?;
    Ok(format!(
        "F_o and F_a bit-identical under 100 candidate shuffles; max softmax row error {worst_row:.1e}; zero weights give an exact zero map"
    ))
}

const UNSEEN_OBJECTS: [usize; 12] = [2, 7, 13, 19, 25, 31, 38, 44, 50, 57, 63, 72];

fn full_scale_taxonomy() -> Taxonomy {
    let mut r = rng(600);
    let mut pairs = BTreeSet::new();
    for (i, &o) in UNSEEN_OBJECTS.iter().enumerate() {
        let want = if i < 4 { 9 } else { 8 };
        let before = pairs.len();
        while pairs.len() < before + want {
            pairs.insert((r.gen_range(0..117), o));
        }
    }
    let others: Vec<usize> = (0..80).filter(|o| !UNSEEN_OBJECTS.contains(o)).collect();
    while pairs.len() < 600 {
        pairs.insert((r.gen_range(0..117), *others.choose(&mut r).unwrap()));
    }
    let mut hoi_classes: Vec<HoiClass> =
        pairs.into_iter().map(|(action_idx, object_idx)| HoiClass { action_idx, object_idx }).collect();
    hoi_classes.shuffle(&mut r);
    let mut frequency: Vec<u32> =
        (0..600).map(|i| if i < 138 { r.gen_range(1..10) } else { r.gen_range(10..4000) }).collect();
    frequency.shuffle(&mut r);
    Taxonomy {
        objects: (0..80).map(|i| format!("object{i}")).collect(),
        actions: (0..117).map(|i| format!("verb{i}")).collect(),
        rare: frequency.iter().map(|&f| f < 10).collect(),
        hoi_classes,
        person_object_idx: 0,
        frequency: Some(frequency),
    }
}

fn split_cardinalities() -> Check {
    let e = |e: funnel_hoi::Error| e.to_string();
    let t = full_scale_taxonomy();
    t.validate().map_err(e)?;
    let rare: BTreeSet<usize> = (0..600).filter(|&c| t.rare[c]).collect();
    ensure(rare.len() == 138, || "fixture rare count".into())?;
    let partition = |seen: &[usize], unseen: &[usize]| {
        let a: BTreeSet<usize> = seen.iter().copied().collect();
        let b: BTreeSet<usize> = unseen.iter().copied().collect();
        a.is_disjoint(&b) && a.len() + b.len() == 600 && a.len() == seen.len() && b.len() == unseen.len()
    };
    let mut notes = Vec::new();
    for setting in [SplitSetting::Uc, SplitSetting::RfUc, SplitSetting::NfUc] {
        let sp = zs_split(&t, setting, 1, &SplitLists::default()).map_err(e)?;
        ensure((sp.n_seen(), sp.n_unseen()) == (480, 120), || format!("{setting}: {}/{}", sp.n_seen(), sp.n_unseen()))?;
        ensure(partition(&sp.seen, &sp.unseen), || format!("{setting} not a partition"))?;
        if setting == SplitSetting::RfUc {
            ensure(sp.unseen.iter().all(|c| rare.contains(c)), || "RF-UC left the rare prefix".into())?;
        }
        notes.push(format!("{setting} 480/120"));
    }
    let lists = SplitLists { unseen_objects: Some(UNSEEN_OBJECTS.to_vec()), unseen_actions: None };
    let sp = zs_split(&t, SplitSetting::Uo, 1, &lists).map_err(e)?;
    ensure((sp.n_seen(), sp.n_unseen()) == (500, 100), || format!("UO: {}/{}", sp.n_seen(), sp.n_unseen()))?;
    ensure(partition(&sp.seen, &sp.unseen), || "UO not a partition".into())?;
    notes.push("UO 500/100".into());
    for (setting, n) in [(SplitSetting::Ua, 22), (SplitSetting::Uv, 20)] {
        let mut verbs: Vec<usize> = (0..117).collect();
        verbs.shuffle(&mut rng(n as u64));
        verbs.truncate(n);
        let lists = SplitLists { unseen_objects: None, unseen_actions: Some(verbs.clone()) };
        let sp = zs_split(&t, setting, 1, &lists).map_err(e)?;
        let want: Vec<usize> = (0..600).filter(|&c| verbs.contains(&t.hoi_classes[c].action_idx)).collect();
        ensure(sp.unseen == want && sp.unseen_actions.len() == n, || format!("{setting} unseen set"))?;
        ensure(partition(&sp.seen, &sp.unseen), || format!("{setting} not a partition"))?;
        notes.push(format!("{setting} {n} verbs {}/{}", sp.n_seen(), sp.n_unseen()));
    }
    Ok(notes.join(", "))
}

/// Plain PR sweep: greedy matching in score order, then every recall step
/// weighted by the best precision at or beyond it.
fn brute_force_ap(dets: &[Detection], gts: &[Vec<Interaction>], class: usize) -> Option<f64> {
    let npos = gts.iter().flatten().filter(|g| g.class == class).count();
    if npos == 0 {
        return None;
    }
    let mut mine: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    mine.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut taken = BTreeSet::new();
    let mut tp = Vec::new();
    for d in mine {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[d.scene].iter().enumerate() {
            let q = iou(&d.human, &g.human).min(iou(&d.object, &g.object));
            if g.class == class && !taken.contains(&(d.scene, j)) && q >= 0.5 && best.is_none_or(|b| q > b.1) {
                best = Some((j, q));
            }
        }
        if let Some((j, _)) = best {
            taken.insert((d.scene, j));
        }
        tp.push(best.is_some());
    }
    let prec: Vec<f64> = (0..tp.len())
        .map(|k| tp[..=k].iter().filter(|&&t| t).count() as f64 / (k + 1) as f64)
        .collect();
    let sum: f64 = (0..tp.len()).filter(|&k| tp[k]).map(|k| prec[k..].iter().cloned().fold(0.0, f64::max)).sum();
    Some(sum / npos as f64)
}

fn square(x: f64, y: f64) -> BBox {
    BBox::from_corners(x, y, x + 0.3, y + 0.3)
}

fn map_oracle() -> Check {
    let e = |e: funnel_hoi::Error| e.to_string();
    let mut rankings = 0;
    for n in 0..=10usize {
        for bits in 0u32..(1 << n) {
            let tp: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let hits = bits.count_ones() as usize;
            for npos in hits.max(1)..=hits + 2 {
                let prec: Vec<f64> = (0..n)
                    .map(|k| tp[..=k].iter().filter(|&&t| t).count() as f64 / (k + 1) as f64)
                    .collect();
                let want: f64 = (0..n).filter(|&k| tp[k]).map(|k| prec[k..].iter().cloned().fold(0.0, f64::max)).sum::<f64>()
                    / npos as f64;
                let got = average_precision(&tp, npos);
                ensure((got - want).abs() < 1e-12, || format!("AP of {tp:?} with {npos} positives"))?;
                rankings += 1;
            }
        }
    }
    let mut r = rng(8);
    for case in 0..2000 {
        let gts: Vec<Vec<Interaction>> = (0..3)
            .map(|_| {
                (0..r.gen_range(0..4))
                    .map(|_| Interaction {
                        human: square(r.gen_range(0.0..0.7), r.gen_range(0.0..0.7)),
                        object: square(r.gen_range(0.0..0.7), r.gen_range(0.0..0.7)),
                        class: r.gen_range(0..3),
                    })
                    .collect()
            })
            .collect();
        let mut dets = Vec::new();
        let n_dets = r.gen_range(0..=10);
        let mut scores: Vec<f64> = (0..n_dets).map(|i| i as f64 / 10.0).collect();
        scores.shuffle(&mut r);
        for score in scores {
            let scene = r.gen_range(0..3);
            let jit = |b: BBox, r: &mut Xoshiro256PlusPlus| {
                let [x, y, _, _] = b.corners();
                square(x + r.gen_range(-0.12..0.12), y + r.gen_range(-0.12..0.12))
            };
            let d = match gts[scene].choose(&mut r) {
                Some(g) if r.gen_bool(0.7) => Detection {
                    scene,
                    human: jit(g.human, &mut r),
                    object: jit(g.object, &mut r),
                    class: if r.gen_bool(0.8) { g.class } else { r.gen_range(0..3) },
                    score,
                },
                _ => Detection {
                    scene,
                    human: square(r.gen_range(0.0..0.7), r.gen_range(0.0..0.7)),
                    object: square(r.gen_range(0.0..0.7), r.gen_range(0.0..0.7)),
                    class: r.gen_range(0..3),
                    score,
                },
            };
            dets.push(d);
        }
        let rep = hoi_map(&dets, &gts, &[true, false, true]).map_err(e)?;
        for c in 0..3 {
            let want = brute_force_ap(&dets, &gts, c);
            let ok = match (rep.per_class_ap[c], want) {
                (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                (None, None) => true,
                _ => false,
            };
            ensure(ok, || format!("case {case} class {c}: {:?} vs {want:?}", rep.per_class_ap[c]))?;
        }
    }
    let gt = Interaction { human: square(0.1, 0.1), object: square(0.5, 0.5), class: 0 };
    let good = Detection { scene: 0, human: gt.human, object: gt.object, class: 0, score: 0.3 };
    let wrong = Detection { human: square(0.6, 0.0), score: 0.9, ..good };
    let two = hoi_map(&[wrong, good], &[vec![gt]], &[true]).map_err(e)?;
    ensure(two.per_class_ap[0] == Some(0.5), || format!("two-detection AP {:?}", two.per_class_ap[0]))?;
    Ok(format!("{rankings} exhaustive rankings and 2000 scene sets agree; two-detection AP = 0.5"))
}

fn zero_shot_sanity(work: &Path) -> Check {
    let data = work.join("reference");
    let start = Instant::now();
    cli_ok(&["gen-data", "--out", s(&data)])?;
    let untrained = cli_ok(&[
        "train", "--data", s(&data), "--out", s(&work.join("untrained.fhck")), "--report",
        s(&work.join("untrained.json")), "--set", "epochs=0",
    ])?;
    let trained = cli_ok(&[
        "train", "--data", s(&data), "--out", s(&work.join("trained.fhck")), "--report",
        s(&work.join("trained.json")),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let base = event(&untrained, "done")?["map_full"].as_f64().unwrap();
    let done = event(&trained, "done")?;
    let (full, unseen) = (done["map_full"].as_f64().unwrap(), done["map_unseen"].as_f64().unwrap());
    let epochs = trained.iter().filter(|v| v["event"] == "epoch").count();
    ensure(epochs == 30, || format!("{epochs} epochs"))?;
    ensure(full >= 3.0 * base, || format!("map_full {full:.4} vs untrained {base:.4}"))?;
    ensure(unseen > 0.0, || format!("map_unseen {unseen}"))?;
    ensure(secs < 900.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "untrained map_full {base:.4}, trained map_full {full:.4}, map_unseen {unseen:.5}, {secs:.0} s"
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const TINY: [&str; 20] = [
    "--set", "stack.c1=8", "--set", "stack.c2=4", "--set", "stack.d=16", "--set", "stack.grid=2", "--set",
    "stack.n_q=4", "--set", "stack.heads=2", "--set", "stack.enc_layers=1", "--set", "stack.inst_dec_layers=1",
    "--set", "stack.inter_dec_layers=1", "--set", "stack.ffn_dim=8",
];

/// Every command once, on a tiny dataset and stack. Returns the log lines
/// without wall-clock fields.
fn session(w: &Path) -> std::result::Result<Vec<Value>, String> {
    let p = |name: &str| w.join(name).to_str().unwrap().to_string();
    let data = p("data");
    let with_tiny = |args: &[&str]| -> Vec<String> {
        args.iter().map(|a| a.to_string()).chain(TINY.iter().map(|a| a.to_string())).collect()
    };
    let runs: Vec<Vec<String>> = vec![
        ["gen-data", "--out", &data, "--set", "c1=8", "--set", "grid=2", "--set", "train_scenes=16", "--set", "test_scenes=8"]
            .iter()
            .map(|a| a.to_string())
            .collect(),
        with_tiny(&["train", "--data", &data, "--out", &p("m.fhck"), "--report", &p("r.json"), "--set", "epochs=2"]),
        with_tiny(&["eval", "--ckpt", &p("m.fhck"), "--data", &data, "--out", &p("e.json"), "--detections", &p("d.json")]),
        with_tiny(&["gradcheck", "--data", &data, "--ckpt", &p("m.fhck"), "--out", &p("g.json")]),
        with_tiny(&["nominate", "--data", &data, "--scene", "1"]),
        with_tiny(&["export-attention", "--data", &data, "--ckpt", &p("m.fhck"), "--scene", "1", "--out", &p("attn")]),
        with_tiny(&["ablate", "--data", &data, "--out", &p("a.csv"), "--factors", "beta", "--factors", "all", "--set", "epochs=1"]),
    ];
    let mut logs = Vec::new();
    for args in runs {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        for mut v in cli_ok(&refs)? {
            if let Some(o) = v.as_object_mut() {
                o.remove("wall_time_s");
            }
            logs.push(v);
        }
    }
    Ok(logs)
}

fn determinism_and_formats(work: &Path) -> Check {
    let e = |e: funnel_hoi::Error| e.to_string();
    let w = work.join("rerun");
    let first_logs = session(&w)?;
    let first = snapshot(&w);
    std::fs::remove_dir_all(&w).map_err(|e| e.to_string())?;
    let second_logs = session(&w)?;
    let second = snapshot(&w);
    ensure(first_logs == second_logs, || "log lines differ between runs".into())?;
    ensure(first.keys().eq(second.keys()), || "different files written".into())?;
    for (k, v) in &first {
        ensure(&second[k] == v, || format!("{} differs between runs", k.display()))?;
    }

    let data = w.join("data");
    let ds = Dataset::load(&data).map_err(e)?;
    for name in ["objects.fheb", "actions.fheb"] {
        let t = load_table(&data.join(name)).map_err(e)?;
        let again = w.join(format!("again_{name}"));
        save_table(&t, &again).map_err(e)?;
        ensure(std::fs::read(&again).unwrap() == first[&PathBuf::from("data").join(name)], || format!("{name} round trip"))?;
    }
    for (name, scenes) in [("scenes.fhds", &ds.train), ("test_scenes.fhds", &ds.test)] {
        let bytes = &first[&PathBuf::from("data").join(name)];
        ensure(&encode_scenes(scenes).map_err(e)? == bytes, || format!("{name} round trip"))?;
        let back = decode_scenes(bytes, ds.config.dims(), Path::new(name)).map_err(e)?;
        ensure(&back == scenes, || format!("{name} decode"))?;
    }
    let ck = &first[&PathBuf::from("m.fhck")];
    let tensors = decode_checkpoint(ck, Path::new("m.fhck")).map_err(e)?;
    ensure(&encode_checkpoint(&tensors).map_err(e)? == ck, || "FHCK round trip".into())?;
    Ok(format!(
        "7 commands rerun with {} identical files and {} identical log lines; FHEB/FHDS/FHCK round trips bit-exact",
        first.len(),
        first_logs.len()
    ))
}

fn ablation_harness(work: &Path) -> Check {
    let data = work.join("reference");
    if !data.exists() {
        cli_ok(&["gen-data", "--out", s(&data)])?;
    }
    let csv = work.join("ablation.csv");
    let start = Instant::now();
    let logs = cli_ok(&["ablate", "--data", s(&data), "--out", s(&csv)])?;
    let secs = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.first() == Some(&"factors,unseen,seen,full"), || "CSV header".into())?;
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    let want = ["beta", "delta", "zeta", "beta+delta", "beta+zeta", "delta+zeta", "beta+delta+zeta", "focal"];
    let mut sorted_labels = labels.clone();
    sorted_labels.sort_unstable();
    let mut sorted_want = want.to_vec();
    sorted_want.sort_unstable();
    ensure(sorted_labels == sorted_want, || format!("rows {labels:?}"))?;
    for l in &lines[1..] {
        let ok = l.split(',').skip(1).all(|x| x.parse::<f64>().is_ok_and(|v| (0.0..=1.0).contains(&v)));
        ensure(ok, || format!("bad row `{l}`"))?;
    }
    let rows = logs.iter().filter(|v| v["event"] == "ablation-row").count();
    ensure(rows == 8, || format!("{rows} ablation-row events"))?;
    Ok(format!("8 rows ({}) in {secs:.0} s", labels.join(" | ")))
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("hungarian optimality", Box::new(hungarian_optimality)),
        ("actuator properties", Box::new(actuator_properties)),
        ("factor constants", Box::new(factor_constants)),
        ("nominator correctness", Box::new(nominator_correctness)),
        ("co-attention invariants", Box::new(coattention_invariants)),
        ("split cardinalities", Box::new(split_cardinalities)),
        ("mAP oracle", Box::new(map_oracle)),
        ("zero-shot sanity", Box::new(|| zero_shot_sanity(w))),
        ("determinism and formats", Box::new(|| determinism_and_formats(w))),
        ("ablation harness", Box::new(|| ablation_harness(w))),
    ];
    let mut failed = Vec::new();
    let mut stderr = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        let line = match &result {
            Ok(detail) => format!("criterion {:>2} {name}: PASS ({detail})\n", i + 1),
            Err(why) => format!("criterion {:>2} {name}: FAIL ({why})\n", i + 1),
        };
        stderr.write_all(line.as_bytes()).unwrap();
        if result.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
