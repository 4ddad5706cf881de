use std::ffi::{CStr, CString};
use std::ptr;

use spikmamba::model::{ModelConfig, Preset, SpikMamba};
use spikmamba::tensor::Tensor;
use spikmamba_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(spk_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn tiny() -> *mut SpkModel {
    let mut m = ptr::null_mut();
    assert_eq!(spk_model_new(SpkPreset::Tiny, 3, &mut m), SpkStatus::Ok);
    m
}

fn geometry(m: *const SpkModel) -> SpkGeometry {
    let mut g = SpkGeometry {
        frames: 0,
        height: 0,
        width: 0,
        patch: 0,
        n_classes: 0,
    };
    assert_eq!(spk_model_geometry(m, &mut g), SpkStatus::Ok);
    g
}

fn clip(g: &SpkGeometry, batch: usize) -> Vec<f32> {
    (0..batch * 3 * g.frames * g.height * g.width)
        .map(|i| ((i * 37) % 11) as f32 / 10.0)
        .collect()
}

#[test]
fn logits_match_the_library() {
    let m = tiny();
    let g = geometry(m);
    let x = clip(&g, 2);
    let mut out = vec![0f32; 2 * g.n_classes];
    assert_eq!(
        spk_model_logits(m, x.as_ptr(), x.len(), 2, out.as_mut_ptr(), out.len()),
        SpkStatus::Ok
    );
    let lib = SpikMamba::<f32>::new(ModelConfig::preset(Preset::Tiny), 3).unwrap();
    let t = Tensor::new(&[2, 3, g.frames, g.height, g.width], x).unwrap();
    assert_eq!(lib.logits(&t).unwrap().data(), &out[..]);
    spk_model_free(m);
}

#[test]
fn checkpoint_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = tiny();
    assert_eq!(spk_model_save(m, path.as_ptr()), SpkStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(spk_model_load(path.as_ptr(), &mut back), SpkStatus::Ok);
    let g = geometry(m);
    assert_eq!(geometry(back), g);
    let x = clip(&g, 1);
    let (mut a, mut b) = (vec![0f32; g.n_classes], vec![0f32; g.n_classes]);
    spk_model_logits(m, x.as_ptr(), x.len(), 1, a.as_mut_ptr(), a.len());
    spk_model_logits(back, x.as_ptr(), x.len(), 1, b.as_mut_ptr(), b.len());
    assert_eq!(a, b);
    spk_model_free(m);
    spk_model_free(back);
}

#[test]
fn errors_set_status_and_message() {
    let mut m = ptr::null_mut();
    assert_eq!(spk_model_load(ptr::null(), &mut m), SpkStatus::NullPointer);
    assert!(last_error().contains("null"));

    let missing = CString::new("/nonexistent/x.ckpt").unwrap();
    assert_eq!(spk_model_load(missing.as_ptr(), &mut m), SpkStatus::Io);
    assert!(m.is_null());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(spk_model_load(junk.as_ptr(), &mut m), SpkStatus::Format);

    let model = tiny();
    let g = geometry(model);
    let x = clip(&g, 1);
    let mut out = vec![0f32; g.n_classes];
    let st = spk_model_logits(model, x.as_ptr(), x.len() - 1, 1, out.as_mut_ptr(), out.len());
    assert_eq!(st, SpkStatus::InvalidArgument);
    assert!(last_error().contains("expected"));
    let st = spk_model_logits(model, x.as_ptr(), x.len(), 1, out.as_mut_ptr(), 1);
    assert_eq!(st, SpkStatus::InvalidArgument);
    spk_model_free(model);
    spk_model_free(ptr::null_mut());
}

#[test]
fn saliency_is_normalized_per_frame() {
    let m = tiny();
    let g = geometry(m);
    let x = clip(&g, 1);
    let n = g.frames * (g.height / g.patch) * (g.width / g.patch);
    let mut out = vec![-1f64; n];
    assert_eq!(
        spk_model_saliency(m, x.as_ptr(), x.len(), out.as_mut_ptr(), n),
        SpkStatus::Ok
    );
    assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    spk_model_free(m);
}

#[test]
fn count_matches_tiny_ledger() {
    let (mut params, mut gflops) = (0u64, 0f64);
    assert_eq!(spk_count(SpkPreset::Tiny, &mut params, &mut gflops), SpkStatus::Ok);
    assert_eq!(params, 3090);
    assert!((gflops - 47248e-9).abs() < 1e-15);
    let m = tiny();
    let (mut p2, mut g2) = (0u64, 0f64);
    assert_eq!(spk_model_count(m, &mut p2, &mut g2), SpkStatus::Ok);
    assert_eq!((p2, g2), (params, gflops));
    spk_model_free(m);
    assert_eq!(
        spk_count(SpkPreset::Tiny, ptr::null_mut(), &mut gflops),
        SpkStatus::NullPointer
    );
}

#[test]
fn events_file_becomes_frames() {
    use spikmamba::events::{save_csv, synth_generate, SyntheticSpec};
    let spec = SyntheticSpec {
        seed: 2,
        ..Default::default()
    };
    let stream = synth_generate(&spec, 1).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("clip.csv");
    save_csv(&stream, &p).unwrap();
    let s = stream.sensor();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut out = vec![0f32; 3 * 4 * 16 * 16];
    let st = spk_events_to_frames(path.as_ptr(), s.height, s.width, 4, 16, 16, out.as_mut_ptr(), out.len());
    assert_eq!(st, SpkStatus::Ok);
    let want = spikmamba::events::to_frames(&stream, 4, 16, 16).unwrap();
    assert_eq!(want.tensor.data(), &out[..]);
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = tempfile::Builder::new().suffix(".c").tempfile().unwrap();
    std::fs::write(
        src.path(),
        "#include \"spikmamba.h\"\nint main(void) { SpkModel *m = 0; SpkGeometry g; (void)g; \
         return spk_model_geometry(m, &g) == SPK_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let obj = src.path().with_extension("o");
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-I"])
        .arg(format!("{dir}/include"))
        .arg(src.path())
        .arg("-o")
        .arg(&obj)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "C compiler rejected the header"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
    let _ = std::fs::remove_file(obj);
}
