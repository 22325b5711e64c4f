use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dimc_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimc-sim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_owned()).collect()
}

const SMALL: &str = r#"{
  "network": "small",
  "layers": [
    {"name": "a", "kind": "conv", "ich": 5, "och": 7, "h": 6, "w": 6, "kh": 3, "kw": 3, "padding": 1},
    {"name": "b", "kind": "fc", "ich": 600, "och": 12, "precision": {"bits": 2, "input_signed": false}}
  ]
}"#;

#[test]
fn unit_layer_reports_two_ops() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "one.json", r#"{"network": "one", "layers": [{"kind": "conv", "ich": 1, "och": 1}]}"#);
    let o = dimc_sim(&["simulate", &w]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert_eq!(column(&out, "ops"), ["2"]);
    assert_eq!(column(&out, "baseline_cycles"), ["21"]);
}

#[test]
fn wide_layers_are_listed_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(
        dir.path(),
        "mixed.json",
        r#"{"network": "m", "layers": [{"name": "int8", "kind": "fc", "ich": 8, "och": 8, "precision": {"bits": 8}},
                                        {"name": "int4", "kind": "fc", "ich": 8, "och": 8}]}"#,
    );
    let o = dimc_sim(&["simulate", &w, "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("int8"));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["layers"].as_array().unwrap().len(), 1);
    assert_eq!(v["layers"][0]["layer"], "int4");
    assert_eq!(v["ineligible"][0]["layer"], "int8");
    assert!(v["ineligible"][0]["reason"].as_str().unwrap().contains("at most 4 bits"));
}

#[test]
fn verify_passes_and_keeps_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "small.json", SMALL);
    let plain = dimc_sim(&["simulate", &w]);
    let checked = dimc_sim(&["simulate", &w, "--verify"]);
    assert!(plain.status.success() && checked.status.success(), "{}", stderr(&checked));
    assert_eq!(plain.stdout, checked.stdout);

    let json = dimc_sim(&["simulate", &w, "--verify", "--format", "json", "--seed", "99"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    for entry in v["verification"].as_array().unwrap() {
        assert_eq!(entry["passed"], true, "{entry}");
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "small.json", SMALL);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = dimc_sim(&["simulate", &w, "--format", "json", "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn bundled_resnet50() {
    let o = dimc_sim(&["simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let speedups = column(&out, "speedup");
    assert_eq!(speedups.len(), 54);
    assert!(speedups.iter().all(|s| s.parse::<f64>().unwrap() > 1.0));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"network": "n", "layers": [{"name": "ok", "kind": "fc", "ich": 1, "och": 1},
                                       {"name": "broken", "kind": "conv", "ich": 1, "och": 1, "h": 2, "kh": 3}]}"#,
    );
    let o = dimc_sim(&["simulate", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken"), "{}", stderr(&o));

    let o = dimc_sim(&["simulate", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let timing = write(dir.path(), "t.json", r#"{"dc_p": {"latency": 0, "interval": 1}}"#);
    let o = dimc_sim(&["simulate", "--timing", &timing]);
    assert_eq!(o.status.code(), Some(2));

    let o = dimc_sim(&["simulate", "--area-ratio", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = dimc_sim(&["sweep", "tiling", "--values", "0,4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn timing_and_frequency_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "small.json", SMALL);
    let slow = write(dir.path(), "t.json", r#"{"memory_latency": 40}"#);
    let base = column(&stdout(&dimc_sim(&["simulate", &w])), "dimc_cycles");
    let slower = column(&stdout(&dimc_sim(&["simulate", &w, "--timing", &slow])), "dimc_cycles");
    for (a, b) in base.iter().zip(&slower) {
        assert!(b.parse::<u64>().unwrap() > a.parse::<u64>().unwrap());
    }
    let g1: f64 = column(&stdout(&dimc_sim(&["simulate", &w])), "gops")[0].parse().unwrap();
    let g2: f64 = column(&stdout(&dimc_sim(&["simulate", &w, "--freq", "1e9"])), "gops")[0].parse().unwrap();
    assert!((g2 / g1 - 2.0).abs() < 1e-12);
}

#[test]
fn sweeps() {
    let o = dimc_sim(&["sweep", "tiling", "--values", "32,64,128,256"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), "tiling_factor"), ["1", "1", "2", "4"]);
    let o = dimc_sim(&["sweep", "grouping", "--values", "16,32,64"]);
    assert_eq!(column(&stdout(&o), "group_count"), ["1", "1", "2"]);
    assert_eq!(column(&stdout(&o), "layer"), ["och=16", "och=32", "och=64"]);
}

#[test]
fn trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(
        dir.path(),
        "one.json",
        r#"{"network": "one", "layers": [{"name": "u", "kind": "fc", "ich": 1, "och": 1}]}"#,
    );
    let trace = dir.path().join("trace.csv");
    let o = dimc_sim(&["simulate", &w, "--trace", trace.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "layer,cycle,class,mnemonic");
    assert!(lines[1].starts_with("u,0,loading,"));
    assert!(lines.iter().any(|l| l.contains("dc.f")));
}

#[test]
fn asm_disasm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = "dl.i vs1=2 nvec=4 sec=1 mask=0b1111\n\
               # weights\n\
               dl.m vs1=4 nvec=2 sec=0 mask=0b0011 m_row=7\n\
               dc.p vs1=31 sh=0 vd=16 dh=1 m_row=7\n\
               dc.f vs1=16 sh=1 vd=24 dh=0 m_row=7 bidx=3\n";
    let asm = write(dir.path(), "p.s", src);
    let bin = dir.path().join("p.bin");
    let o = dimc_sim(&["asm", &asm, "-o", bin.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(&bin).unwrap();
    assert_eq!(bytes.len(), 16);
    assert_eq!(&bytes[..4], &0x1E71_000Bu32.to_le_bytes());

    let o = dimc_sim(&["disasm", bin.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    // the listing reassembles to the same words
    let again = write(dir.path(), "q.s", &text);
    let bin2 = dir.path().join("q.bin");
    assert!(dimc_sim(&["asm", &again, "-o", bin2.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(bin2).unwrap(), bytes);
}

#[test]
fn asm_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad =
        write(dir.path(), "bad.s", "dl.i vs1=2 nvec=4 sec=1 mask=0b1111\ndl.m vs1=40 nvec=1 sec=0 mask=1 m_row=0\n");
    let o = dimc_sim(&["asm", &bad, "-o", dir.path().join("x.bin").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let odd = dir.path().join("odd.bin");
    fs::write(&odd, [0x0Bu8, 0, 0]).unwrap();
    assert_eq!(dimc_sim(&["disasm", odd.to_str().unwrap()]).status.code(), Some(2));
    let foreign = dir.path().join("foreign.bin");
    fs::write(&foreign, 0x0000_0013u32.to_le_bytes()).unwrap();
    assert_eq!(dimc_sim(&["disasm", foreign.to_str().unwrap()]).status.code(), Some(2));
}
