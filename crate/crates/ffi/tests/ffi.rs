// Copyright 2026 The dplac Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::ffi::{CStr, CString};
use std::ptr;

use dplac_ffi::*;

const CONFIG: &str = "\
seed=5
rounds=6
privacy.epsilon=8
privacy.q=0.3
strategy.kind=dp_lac
partition.clients=12
data.samples=400
data.features=3
";

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = dplac_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> *mut DplacConfig {
    let mut cfg = ptr::null_mut();
    let status = unsafe { dplac_config_parse(cstr(text).as_ptr(), &mut cfg) };
    assert_eq!(status, DplacStatus::Ok);
    cfg
}

#[test]
fn accountant_entry_points() {
    let mut eps = 0.0;
    assert_eq!(
        unsafe { dplac_accountant_epsilon(1.0, 1e-5, 1.0, 1, &mut eps) },
        DplacStatus::Ok
    );
    assert!((eps - 5.302585092994046).abs() < 1e-12);
    assert!(dplac_last_error_message().is_null());

    let mut z = 0.0;
    assert_eq!(
        unsafe { dplac_accountant_solve_z(4.0, 1e-5, 0.2, 30, &mut z) },
        DplacStatus::Ok
    );
    unsafe { dplac_accountant_epsilon(z, 1e-5, 0.2, 30, &mut eps) };
    assert!(eps <= 4.0 && eps > 0.95 * 4.0);

    assert_eq!(
        unsafe { dplac_accountant_solve_z(4.0, 1e-5, 1.5, 30, &mut z) },
        DplacStatus::InvalidArgument
    );
    assert!(last_error().contains("q"));
    assert_eq!(
        unsafe { dplac_accountant_solve_z(1e-6, 1e-5, 1.0, 30, &mut z) },
        DplacStatus::RuntimeError
    );
    assert_eq!(
        unsafe { dplac_accountant_epsilon(1.0, 1e-5, 0.5, 3, ptr::null_mut()) },
        DplacStatus::NullPointer
    );
}

#[test]
fn config_handle_round_trip() {
    let cfg = parse(CONFIG);
    let key = cstr("strategy.kind");
    assert_eq!(
        unsafe { dplac_config_set(cfg, key.as_ptr(), cstr("fixed").as_ptr()) },
        DplacStatus::Ok
    );
    assert_eq!(
        unsafe { dplac_config_set(cfg, key.as_ptr(), cstr("bogus").as_ptr()) },
        DplacStatus::ConfigError
    );
    assert_eq!(
        unsafe { dplac_config_set(cfg, cstr("no.such").as_ptr(), cstr("1").as_ptr()) },
        DplacStatus::ConfigError
    );
    assert!(last_error().contains("no.such"));

    let mut text = ptr::null_mut();
    assert_eq!(
        unsafe { dplac_config_serialize(cfg, &mut text) },
        DplacStatus::Ok
    );
    let serialized = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    unsafe { dplac_string_free(text) };
    assert!(
        serialized.contains("strategy.kind=fixed\n"),
        "failed set left the earlier value"
    );

    let again = parse(&serialized);
    let mut text2 = ptr::null_mut();
    unsafe { dplac_config_serialize(again, &mut text2) };
    assert_eq!(
        unsafe { CStr::from_ptr(text2) }.to_str().unwrap(),
        serialized
    );
    unsafe {
        dplac_string_free(text2);
        dplac_config_free(again);
        dplac_config_free(cfg);
    }
}

#[test]
fn parse_errors_are_reported() {
    let mut cfg = ptr::null_mut();
    let text = cstr(&CONFIG.replace("privacy.q=0.3\n", ""));
    assert_eq!(
        unsafe { dplac_config_parse(text.as_ptr(), &mut cfg) },
        DplacStatus::ConfigError
    );
    assert!(cfg.is_null());
    let msg = last_error();
    assert!(msg.contains("privacy.q") && msg.contains("line"), "{msg}");
    assert_eq!(
        unsafe { dplac_config_parse(ptr::null(), &mut cfg) },
        DplacStatus::NullPointer
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { dplac_config_parse(bad.as_ptr().cast(), &mut cfg) },
        DplacStatus::InvalidUtf8
    );
}

#[test]
fn run_and_read_back() {
    let cfg = parse(CONFIG);
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { dplac_run(cfg, 1, &mut a) }, DplacStatus::Ok);
    assert_eq!(unsafe { dplac_run(cfg, 0, &mut b) }, DplacStatus::Ok);
    let rounds = unsafe { dplac_result_num_rounds(a) };
    assert_eq!(rounds, 6);

    let mut z = 0.0;
    let mut c0 = 0.0;
    unsafe {
        dplac_result_noise_multiplier(a, &mut z);
        dplac_result_initial_threshold(a, &mut c0);
    }
    let mut first = DplacRoundRecord::default();
    unsafe { dplac_result_round(a, 0, &mut first) };
    assert_eq!(first.round, 1);
    assert_eq!(first.clip_threshold, c0);
    for i in 0..rounds {
        let (mut ra, mut rb) = (DplacRoundRecord::default(), DplacRoundRecord::default());
        unsafe {
            dplac_result_round(a, i, &mut ra);
            dplac_result_round(b, i, &mut rb);
        }
        assert_eq!(ra, rb);
        assert_eq!(ra.sigma, z * ra.clip_threshold);
    }
    let mut rec = DplacRoundRecord::default();
    assert_eq!(
        unsafe { dplac_result_round(a, rounds, &mut rec) },
        DplacStatus::OutOfRange
    );

    let n = unsafe { dplac_result_num_params(a) };
    assert_eq!(n, 3 * 2 + 2);
    let mut params = vec![0.0; n];
    assert_eq!(
        unsafe { dplac_result_params(a, params.as_mut_ptr(), n) },
        DplacStatus::Ok
    );
    assert_eq!(
        unsafe { dplac_result_params(a, params.as_mut_ptr(), n + 1) },
        DplacStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path().to_str().unwrap());
    assert_eq!(
        unsafe { dplac_result_write_outputs(a, path.as_ptr()) },
        DplacStatus::Ok
    );
    let snapshot = std::fs::read(dir.path().join("model.bin")).unwrap();
    let decoded = dplac::harness::decode_model(&snapshot).unwrap();
    assert_eq!(decoded.as_slice(), &params[..]);

    unsafe {
        dplac_result_free(a);
        dplac_result_free(b);
        dplac_config_free(cfg);
        dplac_result_free(ptr::null_mut());
        dplac_config_free(ptr::null_mut());
    }
    assert_eq!(unsafe { dplac_result_num_rounds(ptr::null()) }, 0);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(dplac_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
