use std::ffi::{c_char, CStr, CString};
use std::ptr;

use segcam_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { sx_last_error_message(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

struct Handle(*mut SxModel);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { sx_model_free(self.0) };
    }
}

fn small_model() -> Handle {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sx_model_new(8, 8, 3, &mut m) }, SxStatus::Ok);
    assert!(!m.is_null());
    Handle(m)
}

fn image() -> Vec<f64> {
    (0..3 * 64).map(|i| ((i * 37) % 64) as f64 / 64.0).collect()
}

#[test]
fn shape_and_lengths() {
    let m = small_model();
    let (mut c, mut h, mut w, mut l) = (0, 0, 0, 0);
    assert_eq!(unsafe { sx_model_shape(m.0, &mut c, &mut h, &mut w, &mut l) }, SxStatus::Ok);
    assert_eq!((c, h, w, l), (3, 8, 8, 2));
    let (mut p, mut s) = (0, 0);
    assert_eq!(unsafe { sx_model_output_len(m.0, &mut p, &mut s) }, SxStatus::Ok);
    assert_eq!((p, s), (128, 64));
}

#[test]
fn segment_matches_library() {
    let m = small_model();
    let img = image();
    let mut probs = vec![0.0; 128];
    let mut mask = vec![0u8; 64];
    let st = unsafe {
        sx_model_segment(m.0, img.as_ptr(), img.len(), probs.as_mut_ptr(), probs.len(), mask.as_mut_ptr(), mask.len())
    };
    assert_eq!(st, SxStatus::Ok, "{}", last_error());

    let model = segcam::segnet::Model::build(segcam::segnet::NetworkConfig {
        height: 8,
        width: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let out = model.forward(&segcam::Tensor::new(vec![3, 8, 8], img).unwrap()).unwrap();
    assert_eq!(probs, out.probabilities.data());
    assert!(mask.iter().zip(&out.predicted_mask).all(|(&a, &b)| a as usize == b));
}

#[test]
fn explain_and_entropy() {
    let m = small_model();
    let img = image();
    let method = CString::new("seg-grad-cam").unwrap();
    let region = vec![1u8; 64];
    let mut sal = vec![0.0; 64];
    let st = unsafe {
        sx_model_explain(
            m.0,
            img.as_ptr(),
            img.len(),
            method.as_ptr(),
            1,
            region.as_ptr(),
            region.len(),
            ptr::null(),
            sal.as_mut_ptr(),
            sal.len(),
        )
    };
    assert_eq!(st, SxStatus::Ok, "{}", last_error());
    assert!(sal.iter().all(|v| (0.0..=1.0).contains(v)));

    let probs = vec![0.5; 2 * 4];
    let mut e = vec![0.0; 4];
    let st = unsafe { sx_pixel_entropy(probs.as_ptr(), 2, 2, 2, e.as_mut_ptr(), e.len()) };
    assert_eq!(st, SxStatus::Ok);
    assert!(e.iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn error_codes_and_messages() {
    let m = small_model();
    let img = image();
    let bad = CString::new("seg-nothing").unwrap();
    let mut sal = vec![0.0; 64];
    let st = unsafe {
        sx_model_explain(m.0, img.as_ptr(), img.len(), bad.as_ptr(), 1, ptr::null(), 0, ptr::null(), sal.as_mut_ptr(), 64)
    };
    assert_eq!(st, SxStatus::UnknownMethod);
    assert!(last_error().contains("seg-nothing"));

    let method = CString::new("seg-grad-cam").unwrap();
    let layer = CString::new("nope").unwrap();
    let region = vec![1u8; 64];
    let st = unsafe {
        sx_model_explain(m.0, img.as_ptr(), img.len(), method.as_ptr(), 1, region.as_ptr(), 64, layer.as_ptr(), sal.as_mut_ptr(), 64)
    };
    assert_eq!(st, SxStatus::UnknownLayer);

    let st = unsafe {
        sx_model_explain(m.0, img.as_ptr(), img.len(), method.as_ptr(), 5, region.as_ptr(), 64, ptr::null(), sal.as_mut_ptr(), 64)
    };
    assert_eq!(st, SxStatus::ClassOutOfRange);

    let mut probs = vec![0.0; 10];
    let st =
        unsafe { sx_model_segment(m.0, img.as_ptr(), img.len(), probs.as_mut_ptr(), probs.len(), ptr::null_mut(), 0) };
    assert_eq!(st, SxStatus::BufferTooSmall);

    let st = unsafe { sx_model_segment(m.0, img.as_ptr(), 5, probs.as_mut_ptr(), probs.len(), ptr::null_mut(), 0) };
    assert_eq!(st, SxStatus::Shape);

    let st = unsafe { sx_model_segment(ptr::null(), img.as_ptr(), img.len(), probs.as_mut_ptr(), 10, ptr::null_mut(), 0) };
    assert_eq!(st, SxStatus::NullPointer);

    let bad_probs = vec![0.7; 2];
    let mut e = [0.0];
    assert_eq!(unsafe { sx_pixel_entropy(bad_probs.as_ptr(), 2, 1, 1, e.as_mut_ptr(), 1) }, SxStatus::NotADistribution);

    let missing = CString::new("/nonexistent/model.bin").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sx_model_load(missing.as_ptr(), &mut h) }, SxStatus::Io);
    assert!(h.is_null());

    // a successful call clears the message
    let (mut p, mut s) = (0, 0);
    assert_eq!(unsafe { sx_model_output_len(m.0, &mut p, &mut s) }, SxStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    let m = small_model();
    assert_eq!(unsafe { sx_model_save(m.0, path.as_ptr()) }, SxStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { sx_model_load(path.as_ptr(), &mut loaded) }, SxStatus::Ok);
    let loaded = Handle(loaded);
    let img = image();
    let (mut a, mut b) = (vec![0.0; 128], vec![0.0; 128]);
    unsafe {
        sx_model_segment(m.0, img.as_ptr(), img.len(), a.as_mut_ptr(), 128, ptr::null_mut(), 0);
        sx_model_segment(loaded.0, img.as_ptr(), img.len(), b.as_mut_ptr(), 128, ptr::null_mut(), 0);
    }
    assert_eq!(a, b);
}

#[test]
fn status_names() {
    let name = |c| unsafe { CStr::from_ptr(sx_status_name(c)) }.to_str().unwrap().to_string();
    assert_eq!(name(0), "ok");
    assert_eq!(name(SxStatus::UnknownMethod as i32), "unknown method");
    assert_eq!(name(99), "unknown status");
    let v = unsafe { CStr::from_ptr(sx_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
