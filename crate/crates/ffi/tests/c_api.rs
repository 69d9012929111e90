use std::ffi::{c_char, CStr};
use std::ptr;

use focc::lattice::{self, LocalProbTable};
use focc::rng::seeded;
use focc::streaming::{self, ContextSchedule, FoccTable};
use focc_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe { focc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn handle(table: &LocalProbTable) -> *mut FoccProbTable {
    let mut h = ptr::null_mut();
    let status = unsafe {
        focc_prob_table_new(
            table.frames(),
            table.target_len(),
            table.vocab(),
            table.log_blank().values().as_ptr(),
            table.log_label().values().as_ptr(),
            table.target().as_ptr(),
            &mut h,
        )
    };
    assert_eq!(status, FoccStatus::Ok, "{}", last_error());
    h
}

#[test]
fn likelihood_matches_core_and_oracle() {
    let mut rng = seeded(7);
    for _ in 0..10 {
        let table = LocalProbTable::random(&mut rng, 4, 2, 3, 2.0);
        let h = handle(&table);
        let (mut fast, mut slow) = (0.0, 0.0);
        unsafe {
            assert_eq!(focc_likelihood(h, &mut fast), FoccStatus::Ok);
            assert_eq!(focc_oracle_likelihood(h, &mut slow), FoccStatus::Ok);
            focc_prob_table_free(h);
        }
        assert_eq!(fast, lattice::likelihood(&table).unwrap());
        assert!((fast - slow).abs() < 1e-10);
    }
}

#[test]
fn gradient_sums_to_expected_occupancy() {
    // Each alignment path takes exactly T + U steps, so the posterior
    // occupancies (gradients w.r.t. log-probabilities) sum to T + U.
    let mut rng = seeded(3);
    let table = LocalProbTable::random(&mut rng, 5, 3, 4, 1.5);
    let h = handle(&table);
    let mut gb = vec![0.0; 5 * 4];
    let mut ge = vec![0.0; 5 * 3];
    let mut ll = 0.0;
    let status = unsafe { focc_likelihood_grad(h, gb.as_mut_ptr(), ge.as_mut_ptr(), &mut ll) };
    unsafe { focc_prob_table_free(h) };
    assert_eq!(status, FoccStatus::Ok);
    assert!((ll - lattice::likelihood(&table).unwrap()).abs() < 1e-12);
    let total: f64 = gb.iter().chain(&ge).sum();
    assert!((total - 8.0).abs() < 1e-9, "{total}");
}

#[test]
fn schedule_and_modified_likelihood() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { focc_schedule_new(2, 1, 6, &mut s) }, FoccStatus::Ok);
    let mut e = 0usize;
    let ends: Vec<usize> = (1..=6)
        .map(|t| {
            assert_eq!(unsafe { focc_schedule_context_end(s, t, &mut e) }, FoccStatus::Ok);
            e
        })
        .collect();
    assert_eq!(ends, vec![3, 3, 5, 5, 6, 6]);
    let mut b = 0;
    assert_eq!(unsafe { focc_schedule_is_boundary(s, 2, &mut b) }, FoccStatus::Ok);
    assert_eq!(b, 1);
    assert_eq!(unsafe { focc_schedule_context_end(s, 0, &mut e) }, FoccStatus::InvalidArgument);

    let mut rng = seeded(11);
    let table = LocalProbTable::random(&mut rng, 6, 2, 3, 1.0);
    let schedule = ContextSchedule::new(2, 1, 6).unwrap();
    let focc = FoccTable::random(&mut rng, &schedule, 2, 0.5);
    let h = handle(&table);
    let mut got = 0.0;
    let status = unsafe { focc_modified_likelihood(h, s, focc.log_gamma().values().as_ptr(), &mut got) };
    assert_eq!(status, FoccStatus::Ok, "{}", last_error());
    let want = streaming::modified_likelihood(&table, &schedule, &focc, true).unwrap();
    assert_eq!(got, want);

    // Non-zero weight on a row that is not a boundary is rejected.
    let mut bad = focc.log_gamma().values().to_vec();
    bad[0] = 1.0;
    let status = unsafe { focc_modified_likelihood(h, s, bad.as_ptr(), &mut got) };
    assert_ne!(status, FoccStatus::Ok);
    assert!(!last_error().is_empty());
    unsafe {
        focc_prob_table_free(h);
        focc_schedule_free(s);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let mut h = ptr::null_mut();
    let blank = [0.0f64; 2];
    // Row does not normalize: blank alone already has probability one.
    let label = [0.0f64; 4];
    let status = unsafe { focc_prob_table_new(1, 1, 2, blank.as_ptr(), label.as_ptr(), [1usize].as_ptr(), &mut h) };
    assert_ne!(status, FoccStatus::Ok);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { focc_likelihood(ptr::null(), &mut 0.0) }, FoccStatus::NullPointer);
    assert_eq!(last_error(), "table is null");

    let path = c"/nonexistent/config.json";
    let mut cfg = ptr::null_mut();
    let status = unsafe { focc_run_config_load(path.as_ptr(), &mut cfg) };
    assert_eq!(status, FoccStatus::Io);
    assert!(cfg.is_null());

    unsafe {
        focc_prob_table_free(ptr::null_mut());
        focc_schedule_free(ptr::null_mut());
        focc_run_config_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates_and_reports_length() {
    assert_eq!(unsafe { focc_likelihood(ptr::null(), ptr::null_mut()) }, FoccStatus::NullPointer);
    let mut buf = [0 as c_char; 4];
    let n = unsafe { focc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, "table is null".len());
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes(), b"tab");
    assert_eq!(unsafe { focc_last_error_message(ptr::null_mut(), 0) }, n);
}

#[test]
fn token_error_rate_and_version() {
    let mut ter = 0.0;
    let status = unsafe { focc_token_error_rate([1usize, 2, 4].as_ptr(), 3, [1usize, 2, 3, 4].as_ptr(), 4, &mut ter) };
    assert_eq!(status, FoccStatus::Ok);
    assert_eq!(ter, 0.25);
    let v = unsafe { CStr::from_ptr(focc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn check_fast_passes() {
    assert_eq!(focc_check(0), FoccStatus::Ok, "{}", last_error());
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/focc.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler found; skipping header check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
