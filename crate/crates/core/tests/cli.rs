use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthfuse::pipeline::PipelineConfig;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_depthfuse"));
    for var in ["CONFIG", "SFM", "IMAGES", "PREDICTIONS", "OUTPUT", "GT_MESH", "GT_DEPTH"] {
        cmd.env_remove(format!("DEPTHFUSE_{var}"));
    }
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
        eprintln!("stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn synth(root: &Path, preset: &str, views: usize) -> PathBuf {
    let scene = root.join("scene");
    let out = run(bin()
        .args(["synth", "--preset", preset, "--num-views"])
        .arg(views.to_string())
        .arg("--out")
        .arg(&scene));
    assert!(out.status.success());
    scene
}

fn oracle_config(root: &Path) -> PathBuf {
    let path = root.join("run.toml");
    std::fs::write(
        &path,
        r#"
[provider]
kind = "synthetic_oracle"
sigma_mult = 0.0
scale = 2.0
shift = 0.5

[fusion]
voxel_budget = 64000

[evaluation]
samples = 5000
"#,
    )
    .unwrap();
    path
}

fn with_scene(cmd: &mut Command, scene: &Path, out: &Path) {
    cmd.arg("--sfm")
        .arg(scene.join("sparse"))
        .arg("--gt-mesh")
        .arg(scene.join("gt_mesh.ply"))
        .arg("--gt-depth")
        .arg(scene.join("gt_depth"))
        .arg("--output")
        .arg(out);
}

#[test]
fn staged_commands_match_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "sphere", 4);
    let cfg = oracle_config(dir.path());
    let staged = dir.path().join("staged");
    for stage in ["project", "condition", "predict", "align", "fuse", "evaluate"] {
        let mut cmd = bin();
        cmd.arg("-c").arg(&cfg).arg(stage);
        with_scene(&mut cmd, &scene, &staged);
        assert!(run(&mut cmd).status.success(), "{stage} failed");
    }
    let oneshot = dir.path().join("oneshot");
    let mut cmd = bin();
    cmd.arg("-c").arg(&cfg).arg("reconstruct");
    with_scene(&mut cmd, &scene, &oneshot);
    let out = run(&mut cmd);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("chamfer"));
    for file in ["mesh.ply", "metrics.json", "alignment.json"] {
        let a = std::fs::read(staged.join(file)).unwrap();
        let b = std::fs::read(oneshot.join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    assert!(oneshot.join("timings.json").is_file());
    assert_eq!(std::fs::read_dir(staged.join("sparse_depth")).unwrap().count(), 4 * 4);
}

#[test]
fn views_filter_and_env_paths() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "plane", 3);
    let out_dir = dir.path().join("env_out");
    let out = run(bin()
        .env("DEPTHFUSE_SFM", scene.join("sparse"))
        .env("DEPTHFUSE_OUTPUT", &out_dir)
        .args(["project", "--views", "view_002.png"]));
    assert!(out.status.success());
    let mut names: Vec<String> = std::fs::read_dir(out_dir.join("sparse_depth"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "view_002.png.depth.f32",
            "view_002.png.depth.npy",
            "view_002.png.ids.npy",
            "view_002.png.meta.json"
        ]
    );
}

#[test]
fn missing_model_fails_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_model_here");
    let out = run(bin().arg("project").arg("--sfm").arg(&missing).arg("-o").arg(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_model_here"));
}

#[test]
fn violated_gate_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "sphere", 3);
    let cfg = oracle_config(dir.path());
    let mut cmd = bin();
    cmd.arg("-c")
        .arg(&cfg)
        .args(["--set", "evaluation.bounds.max_chamfer=1e-9", "reconstruct"]);
    with_scene(&mut cmd, &scene, &dir.path().join("out"));
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chamfer"));

    let mut cmd = bin();
    cmd.arg("-c")
        .arg(&cfg)
        .args(["--set", "evaluation.bounds.max_chamfer=10", "reconstruct"]);
    with_scene(&mut cmd, &scene, &dir.path().join("out2"));
    assert_eq!(run(&mut cmd).status.code(), Some(0));
}

#[test]
fn bad_override_is_rejected() {
    let out = run(bin().args(["--set", "alignment.method=sideways", "project"]));
    assert_eq!(out.status.code(), Some(1));
    let out = run(bin().args(["--set", "nonsense", "project"]));
    assert_eq!(out.status.code(), Some(2), "clap usage error");
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files = vec![root.join("default.toml"), root.join("synthetic_oracle.toml")];
    for entry in std::fs::read_dir(root.join("ablations")).unwrap() {
        files.push(entry.unwrap().path());
    }
    assert!(files.len() >= 8);
    let default = PipelineConfig::load(&files[0], &[]).unwrap();
    let mut expected = PipelineConfig::default();
    expected.paths.output = Some("output".into());
    assert_eq!(default, expected);
    for f in &files {
        PipelineConfig::load(f, &[]).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
    }
}
