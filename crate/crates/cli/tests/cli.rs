use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small-torus"
task = "simulate"
seed = 3

[model]
domain = { kind = "torus2d", lengths = [1.0, 1.0] }
cells = [12, 12]
velocity = { kind = "circle", n = 8 }
sigma = { kind = "constant", value = 1.0 }
collision = { kind = "bgk" }
initial = { kind = "random", seed = 5 }

[evolution]
dt = 0.05
t_final = 2.0
stride = 2
"#;

fn kinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinlab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "name = \"bad\"\n[model\ncells = 3");
    let out = tmp.path().join("out");
    let o = kinlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "typo.toml", &SMALL.replace("stride = 2", "stride = 2\nstrde = 3"));
    let out = tmp.path().join("out");
    let o = kinlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strde"));
    assert!(!out.exists());
}

#[test]
fn invalid_parameter_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "neg.toml", &SMALL.replace("dt = 0.05", "dt = -0.05"));
    let out = tmp.path().join("out");
    let o = kinlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn runs_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(kinlab(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(kinlab(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]).status.code(), Some(0));
    let da = fs::read(a.join("decay.csv")).unwrap();
    assert_eq!(da, fs::read(b.join("decay.csv")).unwrap());
    assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(b.join("config.toml")).unwrap());
}

#[test]
fn every_artifact_carries_the_provenance_header() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let o = kinlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "17"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let mut seen = 0;
    for e in fs::read_dir(&out).unwrap() {
        let p = e.unwrap().path();
        if !matches!(p.extension().and_then(|x| x.to_str()), Some("csv" | "toml")) {
            continue;
        }
        let first = fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("# kinlab "), "{p:?}: {first}");
        assert!(first.contains("config_sha256="), "{p:?}");
        assert!(first.contains("task=simulate seed=17"), "{p:?}: {first}");
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn config_hash_tracks_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let c1 = write(tmp.path(), "a.toml", SMALL);
    let c2 = write(tmp.path(), "b.toml", &SMALL.replace("t_final = 2.0", "t_final = 2.5"));
    let header = |cfg: &str, dir: &str| {
        let out = tmp.path().join(dir);
        kinlab(&["simulate", "--config", cfg, "--out", out.to_str().unwrap()]);
        fs::read_to_string(out.join("decay.csv")).unwrap().lines().next().unwrap().to_string()
    };
    assert_ne!(header(&c1, "a"), header(&c2, "b"));
}

#[test]
fn presets_are_listed_and_printable() {
    let o = kinlab(&["presets"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    for name in ["fig1-left", "fig2-diffusive", "korn-square", "commutator-suite"] {
        assert!(s.contains(name), "{name}");
    }
    let p = kinlab(&["presets", "fig1-right"]);
    assert!(stdout(&p).contains("[control]"));
    assert_eq!(kinlab(&["presets", "nope"]).status.code(), Some(2));
}

#[test]
fn boundary_conditions_decide_the_particle_control_check() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c_min = vec![];
    for name in ["fig2-specular", "fig2-diffusive"] {
        let out = tmp.path().join(name);
        let o = kinlab(&["gcc", "--preset", name, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        let summary: toml::Value = toml::from_str(&fs::read_to_string(out.join("summary.toml")).unwrap()).unwrap();
        c_min.push(summary["reports"]["gcc"]["c_min"].as_float().unwrap());
    }
    assert_eq!(c_min[0], 0.0);
    assert!(c_min[1] > 0.0);
}

fn hypotheses(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("hypotheses.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("id,"))
        .map(|l| {
            let mut it = l.split(',');
            let id = it.next().unwrap().to_string();
            it.next();
            (id, it.next().unwrap().to_string())
        })
        .collect()
}

#[test]
fn validate_accepts_fully_thermalised_torus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let o = kinlab(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for (id, status) in hypotheses(&out) {
        assert!(status == "pass" || status == "n/a", "{id}: {status}");
    }
}

#[test]
fn validate_flags_the_strip_control_region() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = kinlab(&["validate", "--preset", "fig1-right", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let h = hypotheses(&out);
    assert!(h.contains(&("H5'".to_string(), "fail".to_string())), "{h:?}");
    assert!(h.contains(&("H3".to_string(), "pass".to_string())));
}

#[test]
fn gamma2_is_not_applicable_without_detailed_balance() {
    let tmp = tempfile::tempdir().unwrap();
    let k = kinlab::collision::random_kernel(8, 9).unwrap();
    kinlab::collision::kernel_to_csv(&k.kernel_matrix().unwrap(), &tmp.path().join("k.csv")).unwrap();
    let text = SMALL.replace("collision = { kind = \"bgk\" }", "collision = { kind = \"kernel\", path = \"k.csv\" }");
    let cfg = write(tmp.path(), "kernel.toml", &text);
    let out = tmp.path().join("out");
    kinlab(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let h = hypotheses(&out);
    assert!(h.contains(&("G2".to_string(), "n/a".to_string())), "{h:?}");
}
