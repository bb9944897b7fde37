//! End-to-end run of every subcommand on the bundled synthetic fixtures, compared byte for
//! byte against the committed golden outputs. `UPDATE_GOLDEN=1` rewrites both.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::json;

use scenecam::geometry::interpolate_keyframes;
use scenecam::io;
use scenecam::synthetic::{alignment_clip, box_scene, perturb_trajectory, write_alignment_clip, write_scene, ClipSpec};

use crate::http::request;
use crate::{ensure, Outcome};

const SHAPE_SEED: &str = "7";

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixtures() -> PathBuf {
    manifest_dir().join("tests/fixtures")
}

fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1")
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn write_fixtures(root: &Path) -> Result<(), String> {
    if root.exists() {
        std::fs::remove_dir_all(root).map_err(err)?;
    }
    let scene = box_scene(64, 48).map_err(err)?;
    write_scene(&root.join("scene"), &scene).map_err(err)?;

    let dense = interpolate_keyframes(&scene.keyframes, 16).map_err(err)?;
    let gen = perturb_trajectory(&dense, 11, 0.02, 0.03).map_err(err)?;
    io::write_trajectory(&root.join("eval/gen16.json"), &gen).map_err(err)?;
    for s in 0..2u64 {
        let sample = root.join(format!("eval/trials/sample_{s}"));
        let gt = perturb_trajectory(&dense, 100 + s, 0.01, 0.02).map_err(err)?;
        io::write_trajectory(&sample.join("gt.json"), &gt).map_err(err)?;
        for t in 0..3u64 {
            let trial = perturb_trajectory(&gt, 200 + 10 * s + t, 0.03, 0.05).map_err(err)?;
            io::write_trajectory(&sample.join(format!("trial_{t}.json")), &trial).map_err(err)?;
        }
    }

    let alphas = [0.5, 0.8, 1.0, 1.3, 1.7, 2.0];
    for (i, alpha) in alphas.iter().enumerate() {
        let clip = alignment_clip(&format!("clip_{i:02}"), *alpha, 300 + i as u64, ClipSpec::default()).map_err(err)?;
        write_alignment_clip(&root.join("align"), &clip).map_err(err)?;
    }
    Ok(())
}

fn scenecam(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scenecam"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn scenecam: {e}"))?;
    ensure(out.status.success(), || {
        format!(
            "scenecam {} exited with {}: {}",
            args.first().unwrap_or(&""),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Relative path to bytes for every file below `dir`.
fn collect(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    let mut entries: Vec<_> = std::fs::read_dir(dir).map_err(err)?.filter_map(|e| e.ok()).collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = format!("{prefix}{}", e.file_name().to_string_lossy());
        if e.path().is_dir() {
            collect(&e.path(), &format!("{name}/"), out)?;
        } else {
            out.insert(name, std::fs::read(e.path()).map_err(err)?);
        }
    }
    Ok(())
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(data_dir: &Path) -> Result<(Server, String), String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_scenecam"))
        .args(["serve", "--port", "0", "--data-dir", p(data_dir)])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("spawn server: {e}"))?;
    let stderr = child.stderr.take().ok_or("no server stderr")?;
    let server = Server(child);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            if let Some(addr) = line.strip_prefix("listening on http://") {
                let _ = tx.send(addr.to_string());
            }
        }
    });
    let addr = rx
        .recv_timeout(Duration::from_secs(20))
        .map_err(|_| "server did not report its address".to_string())?;
    Ok((server, addr))
}

/// Uploads the scene, sets the keyframes and fetches preview frame 3.
fn served_preview(fx: &Path, data_dir: &Path) -> Result<Vec<u8>, String> {
    let (_server, addr) = start_server(data_dir)?;
    let b64 = |f: &str| -> Result<String, String> {
        Ok(base64::engine::general_purpose::STANDARD.encode(std::fs::read(fx.join("scene").join(f)).map_err(err)?))
    };
    let intrinsics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fx.join("scene/intrinsics.json")).map_err(err)?).map_err(err)?;
    let body = json!({"image": b64("image.png")?, "depth": b64("depth.pfm")?, "intrinsics": intrinsics});
    let created = request(&addr, "POST", "/scenes", Some(body.to_string().as_bytes()))?;
    ensure(created.status == 201, || {
        format!(
            "POST /scenes returned {}: {}",
            created.status,
            String::from_utf8_lossy(&created.body)
        )
    })?;
    let id = created.json()?["scene_id"].as_str().ok_or("no scene_id")?.to_string();

    let keyframes: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fx.join("scene/keyframes.json")).map_err(err)?).map_err(err)?;
    let put = json!({"keyframes": keyframes, "n_frames": 16, "expected_version": 0});
    let resp = request(
        &addr,
        "PUT",
        &format!("/scenes/{id}/trajectory"),
        Some(put.to_string().as_bytes()),
    )?;
    ensure(resp.status == 200, || {
        format!(
            "PUT trajectory returned {}: {}",
            resp.status,
            String::from_utf8_lossy(&resp.body)
        )
    })?;

    let preview = request(&addr, "GET", &format!("/scenes/{id}/preview/3"), None)?;
    ensure(preview.status == 200, || {
        format!("GET preview returned {}", preview.status)
    })?;
    ensure(preview.header("content-type") == Some("image/png"), || {
        format!("preview content-type {:?}", preview.header("content-type"))
    })?;
    Ok(preview.body)
}

fn pipeline(fx: &Path, work: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = work.join("out");
    let scene = fx.join("scene");
    let (cloud, traj) = (out.join("cloud.ply"), out.join("traj16.json"));
    let (preview, shaped) = (out.join("preview"), out.join("shape"));

    scenecam(&[
        "reconstruct",
        "--image",
        p(&scene.join("image.png")),
        "--depth",
        p(&scene.join("depth.pfm")),
        "--intrinsics",
        p(&scene.join("intrinsics.json")),
        "--out-cloud",
        p(&cloud),
    ])?;
    scenecam(&[
        "interp",
        "--keyframes",
        p(&scene.join("keyframes.json")),
        "--frames",
        "16",
        "--out",
        p(&traj),
    ])?;
    scenecam(&[
        "preview",
        "--cloud",
        p(&cloud),
        "--traj",
        p(&traj),
        "--intrinsics",
        p(&scene.join("intrinsics.json")),
        "--out-dir",
        p(&preview),
    ])?;
    scenecam(&[
        "shape",
        "--preview-dir",
        p(&preview),
        "--tns",
        "900",
        "--seed",
        SHAPE_SEED,
        "--denoiser",
        "pull",
        "--out",
        p(&shaped),
    ])?;
    scenecam(&[
        "sweep",
        "--preview-dir",
        p(&preview),
        "--seed",
        SHAPE_SEED,
        "--tns",
        "600,800,900,1000",
        "--out",
        p(&out.join("sweep.csv")),
    ])?;
    scenecam(&[
        "eval",
        "--gt",
        p(&traj),
        "--gen",
        p(&fx.join("eval/gen16.json")),
        "--out",
        p(&out.join("eval.json")),
        "--csv",
        p(&out.join("eval.csv")),
    ])?;
    scenecam(&[
        "eval",
        "--trials-dir",
        p(&fx.join("eval/trials")),
        "--out",
        p(&out.join("eval_trials.json")),
        "--csv",
        p(&out.join("eval_trials.csv")),
    ])?;
    let align = fx.join("align");
    scenecam(&[
        "align",
        "--colmap-dir",
        p(&align.join("colmap")),
        "--depths-dir",
        p(&align.join("depths")),
        "--poses",
        p(&align.join("poses")),
        "--quantile",
        "0.2",
        "--out-report",
        p(&out.join("align/report.json")),
        "--out-poses",
        p(&out.join("align/poses")),
    ])?;

    let mut files = BTreeMap::new();
    collect(&out, "", &mut files)?;
    files.insert(
        "served/preview_0003.png".into(),
        served_preview(fx, &work.join("data"))?,
    );
    Ok(files)
}

fn check_trends(files: &BTreeMap<String, Vec<u8>>) -> Result<String, String> {
    let served = &files["served/preview_0003.png"];
    ensure(served == &files["preview/frame_0003.png"], || {
        "served preview differs from CLI preview".into()
    })?;
    let summary: serde_json::Value = serde_json::from_slice(&files["shape/summary.json"]).map_err(err)?;
    let report: serde_json::Value = serde_json::from_slice(&files["align/report.json"]).map_err(err)?;
    let rejected = report
        .as_array()
        .map_or(0, |a| a.iter().filter(|r| r["accepted"] == false).count());
    Ok(format!(
        "shaped masked rmse {:.4}, align rejected {rejected}/6",
        summary["masked_rmse"].as_f64().unwrap_or(f64::NAN)
    ))
}

pub fn run() -> Outcome {
    let fx = fixtures();
    if updating() {
        write_fixtures(&fx)?;
    }
    ensure(fx.join("scene/image.png").is_file(), || {
        format!("missing fixtures at {}; run with UPDATE_GOLDEN=1", fx.display())
    })?;
    let work = tempfile::tempdir().map_err(err)?;
    let start = Instant::now();
    let files = pipeline(&fx, work.path())?;
    let elapsed = start.elapsed();
    let trend = check_trends(&files)?;

    let golden = golden_dir();
    if updating() {
        if golden.exists() {
            std::fs::remove_dir_all(&golden).map_err(err)?;
        }
        for (name, bytes) in &files {
            let path = golden.join(name);
            std::fs::create_dir_all(path.parent().unwrap()).map_err(err)?;
            std::fs::write(path, bytes).map_err(err)?;
        }
        return Ok(format!("regenerated {} golden files; {trend}", files.len()));
    }
    let mut expected = BTreeMap::new();
    collect(&golden, "", &mut expected)?;
    let missing: Vec<_> = expected.keys().filter(|k| !files.contains_key(*k)).collect();
    let extra: Vec<_> = files.keys().filter(|k| !expected.contains_key(*k)).collect();
    let differ: Vec<_> = files
        .iter()
        .filter(|(k, v)| expected.get(*k).is_some_and(|e| e != *v))
        .map(|(k, _)| k)
        .collect();
    ensure(missing.is_empty() && extra.is_empty() && differ.is_empty(), || {
        format!("golden mismatch: missing {missing:?}, unexpected {extra:?}, differing {differ:?}")
    })?;
    Ok(format!(
        "{} outputs bit-exact across all 8 subcommands in {:.1}s; {trend}",
        files.len(),
        elapsed.as_secs_f64()
    ))
}
