use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use settlebench_ffi::*;

fn last_error() -> String {
    let p = sb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn map_round_trip_through_text() {
    unsafe {
        let mut map = ptr::null_mut();
        assert_eq!(sb_map_generate(20, 20, 3, &mut map), SbStatus::Ok);
        assert!(sb_last_error_message().is_null());
        let (mut w, mut h) = (0, 0);
        assert_eq!(sb_map_size(map, &mut w, &mut h), SbStatus::Ok);
        assert_eq!((w, h), (20, 20));
        let mut frac = 0.0;
        assert_eq!(sb_map_buildable_fraction(map, &mut frac), SbStatus::Ok);
        assert!(frac > 0.0 && frac <= 1.0);

        let mut text = ptr::null_mut();
        assert_eq!(sb_map_to_text(map, &mut text), SbStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(sb_map_from_text(text, &mut back), SbStatus::Ok);
        let mut text2 = ptr::null_mut();
        assert_eq!(sb_map_to_text(back, &mut text2), SbStatus::Ok);
        assert_eq!(CStr::from_ptr(text), CStr::from_ptr(text2));
        sb_string_free(text);
        sb_string_free(text2);
        sb_map_free(map);
        sb_map_free(back);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut map = ptr::null_mut();
        assert_eq!(sb_map_generate(5, 20, 3, &mut map), SbStatus::InvalidArgument);
        assert!(map.is_null());
        assert!(last_error().contains("5x20"));
        assert_eq!(sb_map_generate(20, 20, 3, ptr::null_mut()), SbStatus::NullPointer);
        let junk = CString::new("not a map").unwrap();
        assert_eq!(sb_map_from_text(junk.as_ptr(), &mut map), SbStatus::Parse);
        let mut w = 0;
        assert_eq!(sb_map_size(ptr::null(), &mut w, &mut w), SbStatus::NullPointer);
        let missing = CString::new("/nonexistent/model.mlp").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(sb_mlp_load(missing.as_ptr(), &mut model), SbStatus::Io);
        // Freeing null is a no-op.
        sb_map_free(ptr::null_mut());
        sb_string_free(ptr::null_mut());
    }
}

#[test]
fn knowledge_base_and_output() {
    unsafe {
        let mut kb = ptr::null_mut();
        assert_eq!(sb_kb_default(&mut kb), SbStatus::Ok);
        let mut n = 0;
        assert_eq!(sb_kb_rule_count(kb, &mut n), SbStatus::Ok);
        assert_eq!(n, 56);
        let mut text = ptr::null_mut();
        assert_eq!(sb_kb_to_text(kb, &mut text), SbStatus::Ok);
        let mut kb2 = ptr::null_mut();
        assert_eq!(sb_kb_from_text(text, &mut kb2), SbStatus::Ok);
        sb_string_free(text);

        let mut map = ptr::null_mut();
        assert_eq!(sb_map_generate(20, 20, 1, &mut map), SbStatus::Ok);
        let (mut a, mut b) = (0, 0);
        assert_eq!(sb_kb_score_max(kb, map, 8, 8, &mut a), SbStatus::Ok);
        assert_eq!(sb_kb_score_max(kb2, map, 8, 8, &mut b), SbStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(sb_kb_score_max(kb, map, 0, 0, &mut a), SbStatus::InvalidArgument);

        let p = SbOutputPoints { gold: 1, luxury: 2, science: 3, food: 4, production: 5, trade: 6 };
        let mut w = 0;
        assert_eq!(sb_city_output(&p, &mut w), SbStatus::Ok);
        assert_eq!(w, 1 + 2 + 3 + 4 + 10 + 6);
        sb_kb_free(kb);
        sb_kb_free(kb2);
        sb_map_free(map);
    }
}

#[test]
fn experiment_and_value_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let params = SbExperimentParams {
        evaluator: SbEvaluator::RuleBase,
        episodes: 6,
        turns: 30,
        map_seed: 1,
        seed: 5,
        per_episode_maps: 0,
        epsilon: 0.1,
        out_dir: out_dir.as_ptr(),
    };
    unsafe {
        let mut m1 = ptr::null_mut();
        let mut m2 = ptr::null_mut();
        assert_eq!(sb_experiment_run(&params, &mut m1), SbStatus::Ok);
        assert_eq!(sb_experiment_run(&SbExperimentParams { out_dir: ptr::null(), ..params }, &mut m2), SbStatus::Ok);
        let mut n = 0;
        assert_eq!(sb_metrics_len(m1, &mut n), SbStatus::Ok);
        assert_eq!(n, 6);
        for i in 0..n {
            let (mut a, mut b) = (0, 0);
            assert_eq!(sb_metrics_tgo(m1, i, &mut a), SbStatus::Ok);
            assert_eq!(sb_metrics_tgo(m2, i, &mut b), SbStatus::Ok);
            assert_eq!(a, b);
        }
        let mut t = 0;
        assert_eq!(sb_metrics_tgo(m1, 6, &mut t), SbStatus::InvalidArgument);
        let mut impr = f64::NAN;
        assert_eq!(sb_metrics_improvement(m1, 0.5, &mut impr), SbStatus::Ok);
        assert!(impr.is_finite());
        sb_metrics_free(m1);
        sb_metrics_free(m2);
    }
    assert!(dir.path().join("metrics.csv").exists());

    // A value table written by the core is readable through the ABI.
    let mut table = settlebench::rl::ValueTable::new(2, vec!["turn".into()], 0.1);
    let rec = settlebench::rl::DecisionRecord { state: 1, family: 3, rule: 13, turn: 1 };
    settlebench::rl::update_from_episode(&mut table, &[rec.clone(), rec], 40.0).unwrap();
    let path = dir.path().join("table.txt");
    table.save(&path).unwrap();
    let path = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(sb_value_table_load(path.as_ptr(), &mut t), SbStatus::Ok);
        let mut len = 0;
        assert_eq!(sb_value_table_len(t, &mut len), SbStatus::Ok);
        assert_eq!(len, 1);
        let (mut mean, mut count) = (0.0, 0);
        assert_eq!(sb_value_table_q(t, 1, 3, 13, &mut mean, &mut count), SbStatus::Ok);
        assert_eq!((mean, count), (40.0, 2));
        assert_eq!(sb_value_table_q(t, 0, 3, 13, &mut mean, &mut count), SbStatus::NotFound);
        sb_value_table_free(t);
    }
}

#[test]
fn mlp_predicts_through_abi() {
    let dir = tempfile::tempdir().unwrap();
    let config = settlebench::mlp::MlpConfig { input_dim: 3, hidden: vec![4], init_std: 0.3, ..Default::default() };
    let model = settlebench::mlp::init(&config, 1).unwrap();
    let x = [0.2, 0.5, 0.9];
    let expected = model.predict(&x).unwrap();
    let path = dir.path().join("m.mlp");
    model.save(&path).unwrap();
    let path = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(sb_mlp_load(path.as_ptr(), &mut m), SbStatus::Ok);
        let mut y = 0.0;
        assert_eq!(sb_mlp_predict(m, x.as_ptr(), 3, &mut y), SbStatus::Ok);
        assert_eq!(y, expected);
        assert_eq!(sb_mlp_predict(m, x.as_ptr(), 2, &mut y), SbStatus::InvalidArgument);
        sb_mlp_free(m);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/settlebench.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ SbMap *m = 0; SbStatus s = sb_map_generate(20, 20, 1, &m); sb_map_free(m); return s == SB_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
