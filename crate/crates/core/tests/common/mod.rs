#![allow(dead_code)]

use std::path::PathBuf;

use fdm_readout::experiments::Setup;

pub fn chip7_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/chip7.cfg")
}

pub fn chip7_text() -> String {
    std::fs::read_to_string(chip7_path()).unwrap()
}

pub fn chip7() -> Setup {
    Setup::load(&chip7_path()).unwrap()
}

/// chip7 without ADC or noise.
pub fn chip7_quiet() -> Setup {
    Setup::from_toml(&quiet_text(&chip7_text())).unwrap()
}

pub fn quiet_text(text: &str) -> String {
    let text = text.replace("noise_std = 0.05", "noise_std = 0.0");
    let start = text.find("[readout.adc]").unwrap();
    let end = text[start..].find("\n\n").unwrap() + start;
    format!("{}{}", &text[..start], &text[end..])
}

/// Qubit frequency from the dispersion law, written out independently.
pub fn qubit_hz(gap: f64, sensitivity: f64, symmetry: f64, flux: f64) -> f64 {
    let eps = sensitivity * (flux - symmetry);
    (gap * gap + eps * eps).sqrt()
}

/// Bisection root of `f` on `[a, b]` where the sign changes.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    assert!(fa * f(b) <= 0.0, "no sign change on [{a}, {b}]");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}
