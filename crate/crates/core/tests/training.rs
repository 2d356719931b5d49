mod common;

use common::tiny_trainer;
use disk::autograd::Graph;
use disk::config::Ablation;
use disk::matcher::PoolFeatures;
use disk::params::ParamId;
use disk::trainer::{Checkpoint, Trainer};
use disk::DiskError;

/// Parameters that should receive gradient for one example under `ablation`.
fn param_grads(t: &Trainer, ablation: Ablation) -> disk::params::Grads {
    let mut g = Graph::new(&t.store);
    let pf = if ablation.cs {
        let v = t.model.pool_feature_values(&t.store, &t.pool).unwrap();
        Some((g.input(v.m2), g.input(v.hp)))
    } else {
        None
    };
    let pfs = pf.map(|(m2, hp)| PoolFeatures { m2, hp });
    let i = (0..t.train.len()).find(|&i| !t.pool.graphs[t.train_gold[i]].is_empty()).unwrap();
    let p = t.model.example_loss(&mut g, &t.train[i], &t.pool, pfs.as_ref(), t.train_gold[i], &ablation, 0.0).unwrap();
    let bw = g.backward(p.total);
    let mut grads = bw.params.clone();
    if let Some(pf) = pfs {
        let (a, b) = (bw.input_grad(pf.m2).unwrap(), bw.input_grad(pf.hp).unwrap());
        grads.merge(&t.model.pool_feature_backward(&t.store, &t.pool, a, b).unwrap());
    }
    grads
}

fn norm(grads: &disk::params::Grads, ids: &[ParamId]) -> f64 {
    grads.norm_where(|id| ids.contains(&id))
}

#[test]
fn disabled_modules_receive_no_gradient() {
    let (t, _) = tiny_trainer(40, 8, Ablation::FULL, 21);
    let sk = &t.model.sketch;
    let gate: Vec<ParamId> = sk.wq_gate.params().into_iter().chain(sk.wq_value.params()).collect();
    let mut graph_parts = sk.gcn.clone();
    graph_parts.extend(sk.gru.params());
    graph_parts.extend([sk.wu, sk.pos_embed]);
    let mtc: Vec<ParamId> =
        [sk.wg_attn, sk.w_cbar].into_iter().chain(sk.w_g.params()).chain(sk.w_f.params()).chain(sk.w_z.params()).collect();
    let mut retrieval = t.model.matcher.params();
    retrieval.extend(sk.params());
    retrieval.extend(t.model.generator.sketch_params());

    let full = param_grads(&t, Ablation::FULL);
    for (name, ids) in [("gate", &gate), ("graph", &graph_parts), ("mtc", &mtc), ("retrieval", &retrieval)] {
        assert!(norm(&full, ids) > 0.0, "{name} inactive in the full model");
    }
    let cases = [
        (Ablation { dg: false, ..Ablation::FULL }, vec![&gate]),
        (Ablation { qcg: false, ..Ablation::FULL }, vec![&graph_parts, &mtc]),
        (Ablation { mtc: false, ..Ablation::FULL }, vec![&mtc]),
        (Ablation { cs: false, ..Ablation::FULL }, vec![&retrieval]),
    ];
    for (ab, dead) in cases {
        let grads = param_grads(&t, ab);
        for ids in dead {
            assert_eq!(norm(&grads, ids), 0.0, "{} leaks gradient", ab.label());
        }
    }
}

#[test]
fn qcg_ablation_keeps_gcn_gradient_zero_through_training() {
    let off = Ablation { qcg: false, ..Ablation::FULL };
    let (mut t, _) = tiny_trainer(32, 8, off, 22);
    let before: Vec<_> = t.model.gcn_params().iter().map(|&id| t.store.get(id).clone()).collect();
    for _ in 0..2 {
        t.train_epoch().unwrap();
        let grads = param_grads(&t, off);
        assert_eq!(norm(&grads, &t.model.gcn_params()), 0.0);
    }
    let after: Vec<_> = t.model.gcn_params().iter().map(|&id| t.store.get(id).clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn without_retrieval_total_is_ld_plus_lg() {
    let off = Ablation { cs: false, ..Ablation::FULL };
    let (t, _) = tiny_trainer(24, 8, off, 23);
    let mut g = Graph::new(&t.store);
    let p = t.model.example_loss(&mut g, &t.train[0], &t.pool, None, t.train_gold[0], &off, 0.0).unwrap();
    assert!(p.l_m.is_none() && p.sketch.is_none());
    assert_eq!(g.scalar(p.total), g.scalar(p.l_d) + g.scalar(p.l_g));
}

#[test]
fn seeded_runs_are_bit_identical() {
    let run = || {
        let (mut t, _) = tiny_trainer(32, 8, Ablation::FULL, 24);
        let m = t.train_epoch().unwrap();
        (m, t.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn checkpoint_round_trip_resumes_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (mut t, corpus) = tiny_trainer(32, 8, Ablation::FULL, 25);
    t.train_epoch().unwrap();
    let path = dir.path().join("ck.json");
    t.checkpoint().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, t.checkpoint());

    let mut resumed = Trainer::resume(loaded, &corpus, &corpus[..4]).unwrap();
    let a = t.train_epoch().unwrap();
    let b = resumed.train_epoch().unwrap();
    assert_eq!(a, b);
    assert_eq!(t.store, resumed.store);
}

#[test]
fn run_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (mut t, _) = tiny_trainer(24, 8, Ablation::FULL, 26);
    let mut seen = 0;
    t.run(Some(dir.path()), |_| seen += 1).unwrap();
    assert_eq!(seen, 2);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,L_D,L_M,L_G,L_total,dev_L_total,matcher_top1_acc");
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("best.json").is_file() && dir.path().join("last.json").is_file());
    assert_eq!(Checkpoint::load(&dir.path().join("last.json")).unwrap().epoch, 2);
}

#[test]
fn losses_stay_non_negative_while_training() {
    let (mut t, _) = tiny_trainer(32, 8, Ablation::FULL, 27);
    for _ in 0..2 {
        let m = t.train_epoch().unwrap();
        assert!(m.l_d >= 0.0 && m.l_m.unwrap() >= 0.0 && m.l_g >= 0.0 && m.l_total >= 0.0);
    }
}

#[test]
fn non_finite_loss_reports_divergence() {
    let (mut t, _) = tiny_trainer(24, 8, Ablation::FULL, 28);
    let id = t.model.tokens;
    t.store.get_mut(id).data.iter_mut().for_each(|x| *x = f64::NAN);
    match t.train_epoch() {
        Err(DiskError::Diverged { epoch, last_good }) => assert_eq!((epoch, last_good), (1, 0)),
        other => panic!("expected divergence, got {other:?}"),
    }
}
