use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn rbbf(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_rbbf"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn json_lines(bytes: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(bytes).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn gen(dir: &Path, extra: &[&str]) -> (String, serde_json::Value) {
    let out = dir.join("s.csv");
    let out = out.to_str().unwrap().to_string();
    let mut args = vec!["gen", "--flows-per-window", "2000", "--duration", "1200", "--output", &out];
    args.extend_from_slice(extra);
    let o = rbbf(&args, b"");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth = serde_json::from_str(&fs::read_to_string(format!("{out}.truth.json")).unwrap()).unwrap();
    (out, truth)
}

#[test]
fn empty_input_is_fine() {
    let o = rbbf(&["detect"], b"");
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let stats = json_lines(&o.stderr);
    assert_eq!(stats.last().unwrap()["final"]["records"], 0);
}

#[test]
fn planted_service_is_the_only_event() {
    let dir = tempfile::tempdir().unwrap();
    let (stream, truth) = gen(dir.path(), &["--services", "1", "--clients", "3", "--seed", "4"]);
    let o = rbbf(&["detect", &stream], b"");
    assert!(o.status.success());
    let tuples: Vec<String> = json_lines(&o.stdout).iter().map(|e| e["tuple"].as_str().unwrap().to_string()).collect();
    let want: Vec<String> = truth["services"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_string()).collect();
    assert_eq!(want.len(), 1);
    assert_eq!(tuples, want);
}

#[test]
fn preset_sets_array_size() {
    let o = rbbf(&["detect", "--preset", "core-r2"], b"");
    assert!(o.status.success());
    let config = &json_lines(&o.stderr)[0]["config"];
    assert_eq!(config["m_node_bytes"], 4_194_304);
    assert_eq!(config["m_flow_bytes"], 4_194_304);
    assert_eq!(config["flows_per_window"], 1_500_000.0);
    // flags win over the preset
    let o = rbbf(&["detect", "--preset", "core-r2", "--bits-per-array", "8192", "--hashes", "3"], b"");
    let config = &json_lines(&o.stderr)[0]["config"];
    assert_eq!(config["m_node_bytes"], 1024);
    assert_eq!(config["k"], 3);
}

#[test]
fn params_prints_both_sizes() {
    let o = rbbf(&["params"], b"");
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("k                  5"), "{text}");
    assert!(text.contains("4.375000 MB"), "{text}");
}

#[test]
fn window_files_answer_queries() {
    let dir = tempfile::tempdir().unwrap();
    let (stream, truth) = gen(dir.path(), &["--services", "2", "--seed", "9"]);
    let out = dir.path().join("node");
    let o = rbbf(&["detect", &stream, "--output", out.to_str().unwrap()], b"");
    assert!(o.status.success());
    let mut files: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path().display().to_string()).collect();
    files.sort();
    assert!(files.iter().all(|f| f.ends_with(".rbbf")));
    let tuple = truth["services"][0].as_str().unwrap();
    let mut args = vec!["query", tuple, "--verify"];
    args.extend(files.iter().map(String::as_str));
    let o = rbbf(&args, b"");
    assert!(o.status.success());
    let listed: Vec<&str> = std::str::from_utf8(&o.stdout).unwrap().lines().collect();
    assert!(!listed.is_empty());
    let verdicts = json_lines(&o.stderr);
    assert!(verdicts.iter().any(|v| v["confirmed"] == true));

    let addr_dir = dir.path().join("addr");
    let o = rbbf(&["detect", &stream, "--summary", "address", "--format", "jsonl", "--output", addr_dir.to_str().unwrap()], b"");
    assert!(o.status.success());
    let files: Vec<String> = fs::read_dir(&addr_dir).unwrap().map(|e| e.unwrap().path().display().to_string()).collect();
    let addr = tuple.rsplit_once(':').unwrap().0;
    let mut args = vec!["query", addr, "--verify"];
    args.extend(files.iter().map(String::as_str));
    let o = rbbf(&args, b"");
    assert!(o.status.success());
    let confirmed: BTreeSet<String> = json_lines(&o.stderr)
        .iter()
        .filter(|v| v["confirmed"] == true)
        .map(|v| v["file"].as_str().unwrap().to_string())
        .collect();
    assert!(!confirmed.is_empty());
}

#[test]
fn exit_codes() {
    assert_eq!(rbbf(&["detect", "--epsilon", "2"], b"").status.code(), Some(2));
    assert_eq!(rbbf(&["detect", "/no/such/file.csv"], b"").status.code(), Some(3));
    let bad = b"start_ms,end_ms,src_addr,src_port,dst_addr,dst_port,proto,packets,bytes\n1,2,not-an-ip,1,10.0.0.1,2,tcp,1,1\n";
    assert_eq!(rbbf(&["detect"], bad).status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain.csv");
    fs::write(&plain, "no header here").unwrap();
    assert_eq!(rbbf(&["query", "10.0.0.1", plain.to_str().unwrap()], b"").status.code(), Some(4));
    assert_eq!(rbbf(&["query", "nonsense", plain.to_str().unwrap()], b"").status.code(), Some(2));
}

#[test]
fn bench_reports_no_false_negatives() {
    let o = rbbf(&["bench", "--flows-per-window", "5000", "--duration", "1200", "--seed", "2"], b"");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["report"]["node"]["false_negatives"], 0);
    assert!(v["node_fp_rate"].as_f64().unwrap() <= v["node_fp_bound"].as_f64().unwrap() * 1.5);
}
