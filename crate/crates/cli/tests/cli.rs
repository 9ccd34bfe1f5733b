use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtsn::corpus::{read_wav, write_wav};
use rtsn::dsp::Waveform;
use rtsn::eval::global_snr;
use rtsn::model::load_checkpoint;
use rtsn::synth::{tone, toy_utterance, white_noise};

fn rtsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtsn"))
        .args(args)
        .env("RTSN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = rtsn(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn fail(args: &[&str]) -> String {
    let o = rtsn(args);
    assert!(!o.status.success(), "{args:?} should fail");
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "one-line diagnostic: {err}");
    err
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {report}"))
        .parse()
        .unwrap()
}

/// Ten 1 s utterances, one noise file and a manifest mixing them at 0 dB.
fn toy_manifest(dir: &Path, count: usize) -> PathBuf {
    let mut text = String::new();
    for i in 0..count {
        write_wav(dir.join(format!("s{i}.wav")), &toy_utterance(8000, i as u64)).unwrap();
        text.push_str(&format!("s{i}.wav,noise.wav,0,{i},mix/m{i}.wav\n"));
    }
    write_wav(dir.join("noise.wav"), &white_noise(16000, 0.3, 77)).unwrap();
    fs::create_dir_all(dir.join("mix")).unwrap();
    let m = dir.join("toy.csv");
    fs::write(&m, text).unwrap();
    m
}

const TINY: &str = "# tiny model\ntau = 1\nlstm_units = 32\nconv_channels = 16, 8, 1\n\
unroll_steps = 16\nlearning_rate = 0.003\npatience = 1000\n";

#[test]
fn mix_hits_target_snr() {
    let dir = tempfile::tempdir().unwrap();
    let speech = dir.path().join("s.wav");
    let noise = dir.path().join("n.wav");
    let out = dir.path().join("mix.wav");
    write_wav(&speech, &toy_utterance(8000, 1)).unwrap();
    let s = read_wav(&speech).unwrap();
    let raw = white_noise(8000, 0.3, 2);
    let k = s.rms() / raw.rms();
    write_wav(&noise, &Waveform::new(raw.samples.iter().map(|v| v * k).collect(), 8000)).unwrap();

    let rep = ok(&["mix", "--speech", p(&speech), "--noise", p(&noise), "--snr", "0", "--out", p(&out)]);
    assert!(rep.contains("achieved_snr_db=0.000000"), "{rep}");
    let rep = ok(&["mix", "--speech", p(&speech), "--noise", p(&noise), "--snr", "-5", "--seed", "4", "--out", p(&out)]);
    assert!((value(&rep, "achieved_snr_db") + 5.0).abs() < 1e-6);
    let mixed = read_wav(&out).unwrap();
    let measured = -global_snr(&s, &mixed).unwrap();
    assert!((measured - 5.0).abs() < 0.05, "file SNR {measured}");

    let err = fail(&["mix", "--speech", "missing.wav", "--noise", p(&noise), "--snr", "0", "--out", p(&out)]);
    assert!(err.contains("missing.wav"), "{err}");
}

#[test]
fn eval_and_spectrogram() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.wav");
    write_wav(&a, &toy_utterance(8000, 3)).unwrap();
    let rep = ok(&["eval", "--ref", p(&a), "--deg", p(&a)]);
    assert!(rep.contains("snr=99.0\n") && rep.contains("lsd=0.0\n"), "{rep}");
    assert!(rep.lines().all(|l| l.split_once('=').is_some_and(|(_, v)| v.parse::<f64>().is_ok())));
    let img = dir.path().join("a.pgm");
    ok(&["spectrogram", "--in", p(&a), "--out", p(&img)]);
    let bytes = fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P5\n101 129\n255\n"));
    assert_eq!(bytes.len(), 15 + 101 * 129);
    let missing = dir.path().join("none.wav");
    fail(&["eval", "--ref", p(&a), "--deg", p(&missing)]);
    let bad_img = dir.path().join("nodir/x.pgm");
    fail(&["spectrogram", "--in", p(&a), "--out", p(&bad_img)]);
    assert!(!bad_img.exists());
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path(), 2);
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "tau = 1\nlstm_units 8\n").unwrap();
    let out = dir.path().join("m.ckpt");
    let err = fail(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&out)]);
    assert!(err.contains("config line 2"), "{err}");
    fs::write(&cfg, "tau = 1\nlstm_unit = 8\n").unwrap();
    let err = fail(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&out)]);
    assert!(err.contains("config line 2: unknown key \"lstm_unit\""), "{err}");
    assert!(!out.exists());
}

#[test]
fn train_converges_and_enhances() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path(), 10);
    let cfg = dir.path().join("tiny.conf");
    fs::write(&cfg, format!("{TINY}max_epochs = 60\n")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let rep = ok(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&ckpt)]);
    assert!(rep.starts_with("best_epoch="));
    let log = fs::read_to_string(dir.path().join("m.ckpt.log.csv")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 60);
    let ratio = losses[59] / losses[0];
    assert!(ratio < 0.1, "final/initial training loss {ratio}");
    let params = load_checkpoint(&ckpt).unwrap();
    assert_eq!(params.config.lstm_units, 32);
    assert!(params.stats.is_some());

    let noisy = dir.path().join("mix/m0.wav");
    let e0 = dir.path().join("e0.wav");
    let e1 = dir.path().join("e1.wav");
    let e5 = dir.path().join("e5.wav");
    ok(&["enhance", "--model", p(&ckpt), "--in", p(&noisy), "--out", p(&e0), "--gla", "0"]);
    ok(&["enhance", "--model", p(&ckpt), "--in", p(&noisy), "--out", p(&e1), "--gla", "1"]);
    ok(&["enhance", "--model", p(&ckpt), "--in", p(&noisy), "--out", p(&e5)]);
    assert_eq!(fs::read(&e0).unwrap(), fs::read(&e1).unwrap());
    assert_ne!(fs::read(&e0).unwrap(), fs::read(&e5).unwrap());
    assert_eq!(read_wav(&e5).unwrap().len(), 8000);

    let wide = dir.path().join("wide.wav");
    let mut w16 = tone(1600, 440.0, 0.3);
    w16.sample_rate_hz = 16000;
    write_wav(&wide, &w16).unwrap();
    let err = fail(&["enhance", "--model", p(&ckpt), "--in", p(&wide), "--out", p(&e0)]);
    assert!(err.contains("sample rate 16000 unsupported"), "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(dir.path(), 4);
    let cfg = dir.path().join("tiny.conf");
    fs::write(&cfg, format!("{TINY}max_epochs = 3\n")).unwrap();
    let run = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        ok(&["train", "--manifest", p(&manifest), "--config", p(&cfg), "--out", p(&ckpt), "--seed", "9"]);
        (
            fs::read(&ckpt).unwrap(),
            fs::read(dir.path().join(format!("{tag}.ckpt.log.csv"))).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
    let built = |_: ()| {
        ok(&["build-corpus", "--manifest", p(&manifest), "--seed", "2"]);
        (
            fs::read(dir.path().join("toy.split.csv")).unwrap(),
            fs::read(dir.path().join("toy.stats.bin")).unwrap(),
            fs::read(dir.path().join("mix/m1.wav")).unwrap(),
        )
    };
    assert_eq!(built(()), built(()));
}
