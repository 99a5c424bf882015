use std::path::Path;
use std::process::Command;

use hamlet_cli::commands::{cmd_eval, cmd_gen, cmd_invariance, cmd_train, EvalArgs, GenArgs};
use hamlet_cli::{CliError, RunConfig};
use hamlet_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use hamlet_data::{read_dataset, DatasetKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hamlet"))
}

fn small_config(dir: &Path, data: &Path) -> RunConfig {
    let mut c = RunConfig::parse_text(
        "# tiny model for fast tests\n\
         d_model = 8\nn_heads = 2\ncross_heads = 2\nd_dec = 16\ngf_dim = 8\nradius = 0.3\n\
         epochs = 4\nbatch_size = 2\nlr = 3e-3\n",
    )
    .unwrap();
    c.train_data = Some(data.join("train.bin"));
    c.test_data = Some(data.join("test.bin"));
    c.out_dir = dir.to_path_buf();
    c
}

fn gen_darcy(dir: &Path, n: usize, grid: usize) {
    let args = GenArgs { out_dir: dir.to_path_buf(), n, n_test: 3, grid, ..GenArgs::default() };
    cmd_gen(&args).unwrap();
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = RunConfig::parse_text("lr = 2e-3\npos_enc = concat-coords # inline comment\n\nepochs=7").unwrap();
    assert_eq!(c.train.lr, 2e-3);
    assert_eq!(c.train.epochs, 7);
    assert_eq!(RunConfig::parse_text(&c.to_text()).unwrap(), c);
    assert!(matches!(RunConfig::parse_text("learning_rate = 1"), Err(CliError::Usage(_))));
    assert!(matches!(RunConfig::parse_text("lr = fast"), Err(CliError::Usage(_))));
    assert!(matches!(RunConfig::parse_text("lr = 1\nlr = 2"), Err(CliError::Usage(_))));
    assert!(matches!(RunConfig::parse_text("just words"), Err(CliError::Usage(_))));
    assert_eq!(c.hash(), RunConfig::parse_text(&c.to_text()).unwrap().hash());
}

#[test]
fn gen_echoes_header_and_accepts_forcing_sweep() {
    let dir = tempfile::tempdir().unwrap();
    for beta in ["0.01", "0.1", "1", "10", "100"] {
        let out = dir.path().join(beta);
        let st = bin().args(["gen", "darcy", "--n", "3", "--n-test", "0", "--grid", "9", "--beta", beta]).arg("--out").arg(&out).status().unwrap();
        assert!(st.success());
        let d = read_dataset(out.join("train.bin")).unwrap();
        assert_eq!(d.header.kind, DatasetKind::Darcy);
        assert_eq!(d.header.params, vec![beta.parse::<f64>().unwrap()]);
        assert_eq!((d.len(), d.header.nx), (3, 9));
    }
    let st = bin().args(["gen", "darcy", "--n", "0"]).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn train_and_test_seeds_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 4, 9);
    let tr = read_dataset(dir.path().join("train.bin")).unwrap();
    let te = read_dataset(dir.path().join("test.bin")).unwrap();
    assert_eq!((tr.header.seed, te.header.seed), (0, 4));
    assert!(tr.samples.iter().all(|a| te.samples.iter().all(|b| a.theta != b.theta)));
}

#[test]
fn missing_dataset_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["train", "--set", "train_data=/nonexistent/train.bin", "--set"]).arg(format!("out_dir={}", dir.path().display())).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "radius = 0.1\nwidth = 3\n").unwrap();
    assert_eq!(bin().arg("train").arg("--config").arg(&cfg).status().unwrap().code(), Some(2));
}

#[test]
fn corrupt_files_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 2, 9);
    let bad = dir.path().join("bad.bin");
    let mut bytes = std::fs::read(dir.path().join("train.bin")).unwrap();
    bytes[0] = b'Z';
    std::fs::write(&bad, &bytes).unwrap();
    let st = bin().arg("train").arg("--set").arg(format!("train_data={}", bad.display())).arg("--set").arg(format!("out_dir={}", dir.path().join("o").display())).status().unwrap();
    assert_eq!(st.code(), Some(3));

    let out = dir.path().join("run");
    cmd_train(&small_config(&out, dir.path()), false).unwrap();
    let ck = out.join("model.ckpt");
    let mut bytes = std::fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&ck, &bytes).unwrap();
    let st = bin().args(["eval", "--checkpoint"]).arg(&ck).arg("--data").arg(dir.path().join("test.bin")).status().unwrap();
    assert_eq!(st.code(), Some(3));
}

#[test]
fn train_writes_outputs_and_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 4, 9);
    let out = dir.path().join("run");
    let s = cmd_train(&small_config(&out, dir.path()), false).unwrap();
    assert_eq!(s.epochs, 4);
    assert!(s.eval_nrmse.is_finite());
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,eval_nrmse,eval_rmse,lr,seconds"));
    assert_eq!(history.lines().count(), 5);
    let resolved = std::fs::read_to_string(out.join("run.cfg")).unwrap();
    assert!(resolved.contains("d_model = 8"));

    let metrics = dir.path().join("m.csv");
    let field = dir.path().join("e.csv");
    let args = EvalArgs {
        checkpoint: out.join("model.ckpt"),
        dataset: dir.path().join("test.bin"),
        metrics_csv: Some(metrics.clone()),
        error_field_csv: Some(field.clone()),
        ..Default::default()
    };
    let t = cmd_eval(&args).unwrap();
    assert!((t.nrmse - s.eval_nrmse).abs() < 1e-12);
    assert_eq!(std::fs::read_to_string(&metrics).unwrap().lines().count(), 4);
    let f = std::fs::read_to_string(&field).unwrap();
    assert_eq!(f.lines().next(), Some("frame,point,channel,x,y,pred,target,error"));
    assert_eq!(f.lines().count(), 82);
}

#[test]
fn finer_query_grid_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(&dir.path().join("c"), 4, 9);
    gen_darcy(&dir.path().join("f"), 4, 17);
    let out = dir.path().join("run");
    cmd_train(&small_config(&out, &dir.path().join("c")), false).unwrap();
    let args = EvalArgs {
        checkpoint: out.join("model.ckpt"),
        dataset: dir.path().join("c/test.bin"),
        query_dataset: Some(dir.path().join("f/test.bin")),
        ..Default::default()
    };
    let t = cmd_eval(&args).unwrap();
    assert!(t.nrmse.is_finite() && t.rel_l2.len() == 3);
}

#[test]
fn zero_model_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 2, 9);
    let out = dir.path().join("run");
    cmd_train(&small_config(&out, dir.path()), false).unwrap();
    let path = out.join("model.ckpt");
    let mut ck = load_checkpoint(&path).unwrap();
    for (name, t) in ck.tensors.iter_mut() {
        if name.starts_with("out.1.") || name == "norm.out.shift" {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    save_checkpoint(&path, &ck).unwrap();
    let args = EvalArgs { checkpoint: path, dataset: dir.path().join("test.bin"), ..Default::default() };
    assert_eq!(cmd_eval(&args).unwrap().nrmse, 1.0);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(&dir.path().join("d"), 2, 9);
    let swe = dir.path().join("s");
    cmd_gen(&GenArgs { kind: DatasetKind::Swe, out_dir: swe.clone(), n: 1, n_test: 1, grid: 8, t_in: 2, t_out: 2, ..GenArgs::default() }).unwrap();
    let out = dir.path().join("run");
    cmd_train(&small_config(&out, &dir.path().join("d")), false).unwrap();
    let args = EvalArgs { checkpoint: out.join("model.ckpt"), dataset: swe.join("test.bin"), ..Default::default() };
    assert!(matches!(cmd_eval(&args), Err(CliError::Usage(_))));
}

#[test]
fn resume_continues_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 4, 9);
    let straight = dir.path().join("a");
    cmd_train(&small_config(&straight, dir.path()), false).unwrap();

    let split = dir.path().join("b");
    let mut first = small_config(&split, dir.path());
    first.stop_after = 2;
    assert_eq!(cmd_train(&first, false).unwrap().epochs, 2);
    cmd_train(&small_config(&split, dir.path()), true).unwrap();

    let a = load_checkpoint(straight.join("last.ckpt")).unwrap();
    let b = load_checkpoint(split.join("last.ckpt")).unwrap();
    assert_eq!(a, b);
    let lr = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("history.csv")).unwrap().lines().skip(1).map(|l| l.split(',').nth(4).unwrap().to_string()).collect()
    };
    assert_eq!(lr(&straight), lr(&split));
    // Losses match too; only wall time differs.
    let cols = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("history.csv")).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    assert_eq!(cols(&straight), cols(&split));
}

#[test]
fn invariance_table_over_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    for (name, g) in [("r9", 9), ("r13", 13)] {
        gen_darcy(&dir.path().join(name), 3, g);
    }
    let out = dir.path().join("run");
    let mut cfg = small_config(&out, &dir.path().join("r9"));
    cfg.train.epochs = 1;
    cmd_train(&cfg, false).unwrap();
    let ck = out.join("model.ckpt");
    let same = [dir.path().join("r9/test.bin"), dir.path().join("r9/test.bin")];
    let rows = cmd_invariance(&ck, &same, None).unwrap();
    assert_eq!(rows[0].max_offset, rows[1].max_offset);
    let csv = dir.path().join("inv.csv");
    let both = [dir.path().join("r9/test.bin"), dir.path().join("r13/test.bin")];
    let rows = cmd_invariance(&ck, &both, Some(&csv)).unwrap();
    assert!(rows.iter().all(|r| r.max_offset.is_finite()));
    assert_eq!((rows[0].points, rows[1].points), (81, 169));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().next(), Some("dataset,points,nrmse,max_offset"));
    // Different fields are not a resolution family.
    let mixed = [dir.path().join("r9/test.bin"), dir.path().join("r9/train.bin")];
    assert!(matches!(cmd_invariance(&ck, &mixed, None), Err(CliError::Usage(_))));
}

#[test]
fn ablation_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 4, 9);
    let mut cfg = small_config(&dir.path().join("abl"), dir.path());
    cfg.train.epochs = 1;
    cfg.set("ablate", "radius").unwrap();
    cfg.set("sweep", "0.2,0.3,0.5").unwrap();
    let rows = hamlet_cli::commands::cmd_ablate(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].edges <= w[1].edges));
    let text = std::fs::read_to_string(dir.path().join("abl/ablate_radius.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("ablation,value,config_hash,nrmse,rmse,edges,seconds"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn point_cloud_csv_converts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mesh.csv");
    let mut text = String::from("sample,x,y,mach,p\n");
    for k in 0..25 {
        let t = k as f64 * 0.25;
        text.push_str(&format!("0,{},{},0.7,{}\n", t.cos(), t.sin() * 0.2, t.sin()));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("mesh.bin");
    assert!(bin().arg("convert").arg(&csv).arg("--out").arg(&out).status().unwrap().success());
    let d = hamlet_data::external::load_external_pointcloud_dataset(&out).unwrap();
    assert_eq!(d.header.l, 25);
}

#[test]
fn checkpoint_survives_a_write_read_cycle() {
    let dir = tempfile::tempdir().unwrap();
    gen_darcy(dir.path(), 2, 9);
    let out = dir.path().join("run");
    cmd_train(&small_config(&out, dir.path()), false).unwrap();
    let a = std::fs::read(out.join("last.ckpt")).unwrap();
    let ck: Checkpoint = load_checkpoint(out.join("last.ckpt")).unwrap();
    let copy = dir.path().join("copy.ckpt");
    save_checkpoint(&copy, &ck).unwrap();
    assert_eq!(a, std::fs::read(&copy).unwrap());
}
