use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use flywheel_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fw_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    fw_string_free(s);
    out
}

#[test]
fn loss_matches_closed_form() {
    let mut loss = 0.0;
    // averages -0.5 and -1.5 with beta 2, gamma 1.6
    let st = unsafe { fw_simpo_loss(3, -1.5, 7, -10.5, 2.0, 1.6, &mut loss) };
    assert_eq!(st, FwStatus::Ok);
    let m: f64 = 2.0 * -0.5 - 2.0 * -1.5 - 1.6;
    assert!((loss - (1.0 + (-m).exp()).ln()).abs() < 1e-12);
    assert_eq!(last_error(), "");
}

#[test]
fn grad_signs() {
    let (mut dw, mut dl) = (0.0, 0.0);
    let st = unsafe { fw_simpo_grad(4, -4.0, 4, -4.0, 2.0, 1.6, &mut dw, &mut dl) };
    assert_eq!(st, FwStatus::Ok);
    assert!(dw < 0.0 && dl > 0.0);
    assert!((dw + dl).abs() < 1e-15);
}

#[test]
fn invalid_arguments_report_errors() {
    let mut loss = 0.0;
    let st = unsafe { fw_simpo_loss(0, -1.0, 3, -1.0, 2.0, 1.6, &mut loss) };
    assert_eq!(st, FwStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let st = unsafe { fw_simpo_loss(1, -1.0, 3, -1.0, 2.0, 1.6, ptr::null_mut()) };
    assert_eq!(st, FwStatus::NullPointer);
    let st = unsafe { fw_repetition_ratio(ptr::null(), &mut loss) };
    assert_eq!(st, FwStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    let st = unsafe { fw_repetition_ratio(bad.as_ptr() as *const c_char, &mut loss) };
    assert_eq!(st, FwStatus::InvalidUtf8);
}

#[test]
fn repetition_of_periodic_text() {
    let text = CString::new("0123456789".repeat(10)).unwrap();
    let mut r = 0.0;
    assert_eq!(unsafe { fw_repetition_ratio(text.as_ptr(), &mut r) }, FwStatus::Ok);
    assert!((r - 0.9).abs() < 1e-12);
}

#[test]
fn templates_match_core() {
    let (k1, k2, k3) = (
        CString::new("quantum").unwrap(),
        CString::new("lattice").unwrap(),
        CString::new("annealing").unwrap(),
    );
    let mut out = ptr::null_mut();
    let st = unsafe { fw_render_promptgen(k1.as_ptr(), k2.as_ptr(), k3.as_ptr(), &mut out) };
    assert_eq!(st, FwStatus::Ok);
    let golden = include_str!("../../core/tests/golden/promptgen.txt");
    assert_eq!(unsafe { take(out) }, golden);

    let dup = CString::new("quantum").unwrap();
    let st = unsafe { fw_render_promptgen(k1.as_ptr(), dup.as_ptr(), k3.as_ptr(), &mut out) };
    assert_eq!(st, FwStatus::InvalidArgument);

    let q = CString::new("What is the capital of France?").unwrap();
    let a = CString::new("Paris is the capital of Germany.").unwrap();
    assert_eq!(unsafe { fw_render_improver(q.as_ptr(), a.as_ptr(), &mut out) }, FwStatus::Ok);
    assert_eq!(unsafe { take(out) }, include_str!("../../core/tests/golden/improver.txt"));

    let p = CString::new("How do I bake sourdough bread at home?").unwrap();
    assert_eq!(unsafe { fw_render_topic_intent(p.as_ptr(), &mut out) }, FwStatus::Ok);
    assert_eq!(unsafe { take(out) }, include_str!("../../core/tests/golden/topic_intent.txt"));
}

#[test]
fn parse_generated_qa_round_trip() {
    let raw = CString::new("<question>\nWhy is the sky blue?\n</question>\n</solution>\nRayleigh scattering.\n</solution>").unwrap();
    let (mut q, mut s) = (ptr::null_mut(), ptr::null_mut());
    let st = unsafe { fw_parse_generated_qa(raw.as_ptr(), &mut q, &mut s) };
    assert_eq!(st, FwStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { take(q) }, "Why is the sky blue?");
    assert_eq!(unsafe { take(s) }, "Rayleigh scattering.");

    let junk = CString::new("no tags here").unwrap();
    let st = unsafe { fw_parse_generated_qa(junk.as_ptr(), &mut q, &mut s) };
    assert_eq!(st, FwStatus::ParseFailed);
    assert!(!last_error().is_empty());
}

#[test]
fn policy_handle_trains() {
    let mut policy = ptr::null_mut();
    let mut data = ptr::null_mut();
    unsafe {
        assert_eq!(fw_policy_new(4, FwContext::Bigram, &mut policy), FwStatus::Ok);
        assert_eq!(fw_policy_num_logits(policy), 20);
        assert_eq!(fw_dataset_new(&mut data), FwStatus::Ok);
        for k in 0..8u32 {
            let prompt = [k % 4];
            let chosen = [0u32, 1, 0, 1];
            let rejected = [3u32, 2, 3];
            let st = fw_dataset_push(data, prompt.as_ptr(), 1, chosen.as_ptr(), 4, rejected.as_ptr(), 3);
            assert_eq!(st, FwStatus::Ok);
        }
        assert_eq!(fw_dataset_len(data), 8);
        let st = fw_dataset_push(data, ptr::null(), 0, ptr::null(), 0, [1u32].as_ptr(), 1);
        assert_eq!(st, FwStatus::InvalidArgument);

        let chosen = [0u32, 1, 0, 1];
        let mut before = 0.0;
        assert_eq!(fw_policy_logprob(policy, [0u32].as_ptr(), 1, chosen.as_ptr(), 4, &mut before), FwStatus::Ok);
        assert!((before - 4.0 * (0.25f64).ln()).abs() < 1e-12);

        let (mut l0, mut l1) = (0.0, 0.0);
        let st = fw_policy_train(policy, data, 2.0, 1.6, 1.0, 100, &mut l0, &mut l1);
        assert_eq!(st, FwStatus::Ok, "{}", last_error());
        assert!(l1 < 0.5 * l0, "{l0} -> {l1}");
        let mut after = 0.0;
        fw_policy_logprob(policy, [0u32].as_ptr(), 1, chosen.as_ptr(), 4, &mut after);
        assert!(after > before);

        let bad = [9u32];
        assert_eq!(fw_policy_logprob(policy, ptr::null(), 0, bad.as_ptr(), 1, &mut after), FwStatus::InvalidArgument);
        fw_dataset_free(data);
        fw_policy_free(policy);
        fw_policy_free(ptr::null_mut());
    }
}

#[test]
fn c_program_links_against_header() {
    let Ok(exe) = std::env::current_exe() else { return };
    let target = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    if !target.join("libflywheel_ffi.so").exists() {
        eprintln!("shared library not built, skipping");
        return;
    }
    let dir = tempfile_dir();
    let bin = dir.join("smoke");
    let compiled = std::process::Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&target)
        .arg(format!("-Wl,-rpath,{}", target.display()))
        .args(["-lflywheel_ffi", "-lm", "-o"])
        .arg(&bin)
        .status();
    match compiled {
        Ok(s) if s.success() => {}
        Ok(s) => panic!("C compile failed: {s}"),
        Err(e) => {
            eprintln!("no C compiler ({e}), skipping");
            return;
        }
    }
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi-smoke");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
