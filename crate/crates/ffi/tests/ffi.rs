use std::ffi::{CStr, CString};
use std::ptr;

use eshdr_ffi::*;

fn last_error() -> String {
    let p = eshdr_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn image(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> *mut EshdrRadiance {
    let data: Vec<f32> = (0..width * height).map(|i| f(i % width, i / width)).collect();
    let mut out = ptr::null_mut();
    let status = unsafe { eshdr_radiance_new(width, height, 1, data.as_ptr(), &mut out) };
    assert_eq!(status, EshdrStatus::Ok);
    out
}

#[test]
fn radiance_round_trips_through_pfm() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.pfm").to_str().unwrap()).unwrap();
    let img = image(16, 12, |x, y| 0.25 + x as f32 * 1.5 + y as f32 * 100.0);
    unsafe {
        assert_eq!(eshdr_radiance_write_pfm(img, path.as_ptr()), EshdrStatus::Ok);
        assert!(eshdr_last_error().is_null());
        let mut back = ptr::null_mut();
        assert_eq!(eshdr_radiance_read_pfm(path.as_ptr(), &mut back), EshdrStatus::Ok);
        assert_eq!(
            (eshdr_radiance_width(back), eshdr_radiance_height(back), eshdr_radiance_channels(back)),
            (16, 12, 1)
        );
        let a = std::slice::from_raw_parts(eshdr_radiance_data(img), 16 * 12);
        let b = std::slice::from_raw_parts(eshdr_radiance_data(back), 16 * 12);
        assert_eq!(a, b);

        let mut psnr = 0.0;
        assert_eq!(eshdr_mu_psnr(img, back, 5000.0, &mut psnr), EshdrStatus::Ok);
        assert!(psnr.is_infinite());
        let mut ssim = 0.0;
        assert_eq!(eshdr_mu_ssim(img, back, 5000.0, &mut ssim), EshdrStatus::Ok);
        assert_eq!(ssim, 1.0);
        eshdr_radiance_free(back);
        eshdr_radiance_free(img);
    }
}

#[test]
fn events_simulate_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("e.eshdr").to_str().unwrap()).unwrap();
    let a = image(4, 2, |_, _| 0.1);
    let b = image(4, 2, |x, _| if x < 2 { 0.1 } else { 0.1 * 1.5 });
    let frames = [a as *const EshdrRadiance, b as *const EshdrRadiance];
    let times = [0u64, 1000];
    unsafe {
        let mut ev = ptr::null_mut();
        assert_eq!(eshdr_events_simulate(frames.as_ptr(), times.as_ptr(), 2, 0.2, 1e-4, &mut ev), EshdrStatus::Ok);
        // ln 1.5 / 0.2 → two positive crossings at each brightened pixel
        assert_eq!(eshdr_events_len(ev), 8);
        let mut e = EshdrEvent::default();
        assert_eq!(eshdr_events_get(ev, 0, &mut e), EshdrStatus::Ok);
        assert_eq!(e.polarity, 1);
        assert!(e.x >= 2 && e.t > 0 && e.t <= 1000);
        assert_eq!(eshdr_events_get(ev, 8, &mut e), EshdrStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        assert_eq!(eshdr_events_write(ev, path.as_ptr()), EshdrStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(eshdr_events_read(path.as_ptr(), &mut back), EshdrStatus::Ok);
        assert_eq!(eshdr_events_len(back), 8);
        for i in 0..8 {
            let (mut x, mut y) = (EshdrEvent::default(), EshdrEvent::default());
            eshdr_events_get(ev, i, &mut x);
            eshdr_events_get(back, i, &mut y);
            assert_eq!((x.t, x.x, x.y, x.polarity), (y.t, y.x, y.y, y.polarity));
        }
        eshdr_events_free(back);
        eshdr_events_free(ev);
        eshdr_radiance_free(a);
        eshdr_radiance_free(b);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.eshdr");
    std::fs::write(&bad, b"NOTMAGIC and then some").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    unsafe {
        let mut ev = ptr::null_mut();
        assert_eq!(eshdr_events_read(bad.as_ptr(), &mut ev), EshdrStatus::Io);
        assert!(ev.is_null());
        let msg = last_error();
        assert!(msg.contains("bad.eshdr") && msg.contains("byte 0"), "{msg}");

        let mut img = ptr::null_mut();
        assert_eq!(eshdr_radiance_read_pfm(ptr::null(), &mut img), EshdrStatus::InvalidArgument);
        assert!(last_error().contains("null"));

        // a non-finite sample is rejected by the image constructor
        let data = [1.0f32, f32::NAN];
        assert_eq!(eshdr_radiance_new(2, 1, 1, data.as_ptr(), &mut img), EshdrStatus::Validation);
        assert!(img.is_null());

        let a = image(2, 2, |_, _| 1.0);
        let b = image(3, 2, |_, _| 1.0);
        let mut v = 0.0;
        assert_eq!(eshdr_mu_psnr(a, b, 5000.0, &mut v), EshdrStatus::Validation);
        eshdr_radiance_free(a);
        eshdr_radiance_free(b);

        // null handles are harmless in accessors and destructors
        assert_eq!(eshdr_radiance_width(ptr::null()), 0);
        assert!(eshdr_radiance_data(ptr::null()).is_null());
        eshdr_radiance_free(ptr::null_mut());
        eshdr_events_free(ptr::null_mut());
    }
}

#[test]
fn pipeline_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("static.toml");
    std::fs::write(
        &cfg,
        "[scene]\nmotion_bound = 0.0\n\n[scene.synthetic]\nwidth = 32\nheight = 32\n\n[bracket]\nnoise_a = 0.0\nnoise_b = 0.0\n",
    )
    .unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    let mut report = EshdrReport {
        mu_psnr: 0.0,
        mu_ssim: 0.0,
        charbonnier: 0.0,
        baseline_mu_psnr: 0.0,
        improvement_db: 0.0,
    };
    let status = unsafe { eshdr_pipeline_run(cfg.as_ptr(), out.as_ptr(), &mut report) };
    assert_eq!(status, EshdrStatus::Ok, "{:?}", unsafe { eshdr_last_error().as_ref() }.map(|_| last_error()));
    assert!(report.mu_psnr >= 50.0, "{report:?}");
    assert!(report.mu_ssim > 0.99);
    assert!(dir.path().join("run/manifest.toml").is_file());

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[fuse]\nmood = \"debevec\"\n").unwrap();
    let typo = CString::new(typo.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { eshdr_pipeline_run(typo.as_ptr(), out.as_ptr(), ptr::null_mut()) }, EshdrStatus::Config);
    assert!(last_error().contains("mood"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(eshdr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
