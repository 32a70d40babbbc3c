//! Service-time calibration from measurements of a real deployment.
//!
//! Inputs are link throughputs and the durations of single-chunk operations and of
//! zero-byte operations, all taken from one client on a host without a storage
//! service. Zero-byte operations only talk to the manager, so their mean is charged
//! to the manager; the storage time is what remains of a full operation after the
//! network transfer and the zero-byte cost. The modeled control messages are
//! subtracted as well, so a profile replayed on the calibration benchmark
//! reproduces the measured means.

use serde::{Deserialize, Serialize};

use crate::error::CalibrationError;
use crate::net::{frame_count, wire_bytes};
use crate::storage::{PlatformProfile, DEFAULT_CONTROL_MESSAGE_SIZE, DEFAULT_FRAME_SIZE};
use crate::units::Rate;

/// Which operation the calibration benchmark ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationOp {
    #[default]
    Write,
    Read,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSet {
    pub remote_throughput_bps: f64,
    pub loopback_throughput_bps: f64,
    pub chunk_size_bytes: u64,
    /// Durations of writes (or reads) of one full chunk, in ns.
    pub full_op_ns: Vec<f64>,
    /// Durations of zero-byte operations, in ns.
    pub zero_size_ns: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_message_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_latency: Option<u64>,
    #[serde(default)]
    pub calibration_op: CalibrationOp,
}

impl MeasurementSet {
    pub fn from_toml(text: &str) -> Result<MeasurementSet, CalibrationError> {
        toml::from_str(text).map_err(|e| CalibrationError::Invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("measurements serialize")
    }
}

/// Per-byte transfer time for a link of `bits_per_sec`.
pub fn net_mu_from_throughput(bits_per_sec: f64) -> Result<Rate, CalibrationError> {
    if !(bits_per_sec.is_finite() && bits_per_sec > 0.0) {
        return Err(CalibrationError::Invalid(format!(
            "throughput must be positive, got {bits_per_sec}"
        )));
    }
    let exact = bits_per_sec.fract() == 0.0 && bits_per_sec <= u64::MAX as f64;
    let rate = if exact {
        Rate::new(8_000_000_000, bits_per_sec as u64)
    } else {
        Rate::from_f64(8e9 / bits_per_sec)
    };
    rate.map_err(|e| CalibrationError::Invalid(e.to_string()))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Time to move `payload` bytes across a remote link without contention.
fn transfer_ns(payload: u64, mu: Rate, latency: u64, frame_size: u64, control: u64) -> u64 {
    let wire = wire_bytes(payload, control);
    let full = wire / frame_size;
    let rest = wire % frame_size;
    let mut t = latency + full * mu.time_for(frame_size);
    if rest > 0 || frame_count(wire, frame_size) > full {
        t += mu.time_for(rest);
    }
    t
}

pub fn derive_profile(m: &MeasurementSet) -> Result<PlatformProfile, CalibrationError> {
    if m.chunk_size_bytes == 0 {
        return Err(CalibrationError::Invalid("chunk_size_bytes must be positive".into()));
    }
    if m.full_op_ns.is_empty() || m.zero_size_ns.is_empty() {
        return Err(CalibrationError::Invalid(
            "both sample lists need at least one value".into(),
        ));
    }
    if m.full_op_ns
        .iter()
        .chain(&m.zero_size_ns)
        .any(|x| !x.is_finite() || *x < 0.0)
    {
        return Err(CalibrationError::Invalid(
            "samples must be finite and non-negative".into(),
        ));
    }
    let frame_size = m.frame_size.unwrap_or(DEFAULT_FRAME_SIZE);
    if frame_size == 0 {
        return Err(CalibrationError::Invalid("frame_size must be positive".into()));
    }
    let control = m.control_message_size.unwrap_or(DEFAULT_CONTROL_MESSAGE_SIZE);
    let latency = m.core_latency.unwrap_or(0);
    let remote = net_mu_from_throughput(m.remote_throughput_bps)?;
    let loopback = net_mu_from_throughput(m.loopback_throughput_bps)?;

    let ctrl = transfer_ns(0, remote, latency, frame_size, control) as f64;
    let net = transfer_ns(m.chunk_size_bytes, remote, latency, frame_size, control) as f64;
    let zero = mean(&m.zero_size_ns);
    let full = mean(&m.full_op_ns);

    // Control messages in a zero-byte op, and manager visits.
    let (zero_msgs, visits) = match m.calibration_op {
        CalibrationOp::Write => (4.0, 2.0),
        CalibrationOp::Read => (2.0, 1.0),
    };
    let manager_total = zero - zero_msgs * ctrl;
    if manager_total < 0.0 {
        return Err(CalibrationError::NegativeManager {
            zero_ns: zero,
            overhead_ns: zero_msgs * ctrl,
        });
    }
    // A full op adds one more control message: the chunk ack, or the fetch request.
    let storage = full - net - zero - ctrl;
    if storage <= 0.0 {
        return Err(CalibrationError::NonPositiveStorage {
            full_ns: full,
            net_ns: net,
            manager_ns: zero,
            overhead_ns: ctrl,
            storage_ns: storage,
        });
    }
    let invalid = |e: crate::units::UnitError| CalibrationError::Invalid(e.to_string());
    let mu_manager = Rate::new(manager_total.round() as u64, visits as u64).map_err(invalid)?;
    let mu_storage = Rate::new(storage.round() as u64, m.chunk_size_bytes).map_err(invalid)?;
    if mu_storage.is_zero() {
        return Err(CalibrationError::NonPositiveStorage {
            full_ns: full,
            net_ns: net,
            manager_ns: zero,
            overhead_ns: ctrl,
            storage_ns: storage,
        });
    }
    Ok(PlatformProfile {
        mu_net_remote: remote,
        mu_net_loopback: loopback,
        core_latency: latency,
        core_mu_net: None,
        mu_storage,
        mu_manager,
        mu_client: Rate::ZERO,
        frame_size,
        control_message_size: control,
        host_overrides: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiResult {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub half_width: f64,
    pub relative_half_width: f64,
    pub sufficient: bool,
}

/// Two-sided confidence interval of the mean using Student's t. The sample set is
/// sufficient when the half-width is within `target_rel` of the mean.
pub fn ci_check(samples: &[f64], confidence: f64, target_rel: f64) -> CiResult {
    let n = samples.len();
    if n < 2 {
        return CiResult {
            n,
            mean: samples.first().copied().unwrap_or(f64::NAN),
            std_dev: f64::NAN,
            half_width: f64::INFINITY,
            relative_half_width: f64::INFINITY,
            sufficient: false,
        };
    }
    let m = mean(samples);
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = student_t_quantile(0.5 + confidence / 2.0, (n - 1) as f64);
    let half = t * sd / (n as f64).sqrt();
    let rel = if half == 0.0 { 0.0 } else { half / m.abs() };
    CiResult {
        n,
        mean: m,
        std_dev: sd,
        half_width: half,
        relative_half_width: rel,
        sufficient: rel <= target_rel,
    }
}

/// Inverse CDF of Student's t with `df` degrees of freedom.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && df > 0.0);
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    if p == 0.5 {
        return 0.0;
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_beta(x, df / 2.0, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b).
fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn plain(full: Vec<f64>, zero: Vec<f64>) -> MeasurementSet {
        MeasurementSet {
            remote_throughput_bps: 1e9,
            loopback_throughput_bps: 1e10,
            chunk_size_bytes: 1_000_000,
            full_op_ns: full,
            zero_size_ns: zero,
            frame_size: None,
            control_message_size: Some(0),
            core_latency: None,
            calibration_op: CalibrationOp::Write,
        }
    }

    #[test]
    fn throughput_to_ns_per_byte() {
        assert_eq!(net_mu_from_throughput(1e9).unwrap(), Rate::from_int(8));
        assert_eq!(net_mu_from_throughput(1e10).unwrap(), Rate::new(4, 5).unwrap());
        assert_eq!(net_mu_from_throughput(8.0).unwrap(), Rate::from_int(1_000_000_000));
        assert!(net_mu_from_throughput(0.0).is_err());
    }

    #[test]
    fn storage_time_is_the_remainder() {
        let p = derive_profile(&plain(vec![12e6], vec![1e6])).unwrap();
        assert_eq!(p.mu_storage, Rate::from_int(3));
        assert_eq!(p.mu_manager, Rate::from_int(500_000));
        assert_eq!(p.mu_client, Rate::ZERO);
        assert_eq!(
            (p.mu_net_remote, p.mu_net_loopback),
            (Rate::from_int(8), Rate::new(4, 5).unwrap())
        );
    }

    #[test]
    fn no_room_for_storage_is_an_error() {
        let e = derive_profile(&plain(vec![8e6], vec![0.0])).unwrap_err();
        assert!(matches!(e, CalibrationError::NonPositiveStorage { .. }));
        let e = derive_profile(&plain(vec![7e6], vec![0.0])).unwrap_err();
        assert!(matches!(e, CalibrationError::NonPositiveStorage { .. }));
    }

    #[test]
    fn control_overhead_is_subtracted() {
        let m = MeasurementSet {
            control_message_size: Some(1024),
            core_latency: Some(5_000),
            ..plain(vec![12e6], vec![1e6])
        };
        let p = derive_profile(&m).unwrap();
        let ctrl = 5_000 + 8 * 1024;
        assert_eq!(p.mu_manager.time_for(2), 1_000_000 - 4 * ctrl);
        let net = 5_000 + 8_000_000;
        assert_eq!(p.mu_storage.time_for(1_000_000), 12_000_000 - net - 1_000_000 - ctrl);
        let m = MeasurementSet {
            zero_size_ns: vec![1_000.0],
            ..m
        };
        assert!(matches!(
            derive_profile(&m),
            Err(CalibrationError::NegativeManager { .. })
        ));
    }

    #[test]
    fn doubling_chunk_keeps_mu_storage() {
        let a = derive_profile(&plain(vec![12e6], vec![1e6])).unwrap();
        let b = derive_profile(&MeasurementSet {
            chunk_size_bytes: 2_000_000,
            ..plain(vec![23e6], vec![1e6])
        })
        .unwrap();
        assert_eq!(a.mu_storage, b.mu_storage);
    }

    #[test]
    fn toml_round_trip() {
        let m = plain(vec![1.0, 2.5], vec![0.5]);
        assert_eq!(MeasurementSet::from_toml(&m.to_toml()).unwrap(), m);
        assert!(MeasurementSet::from_toml("remote_throughput_bps = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn t_quantile_matches_reference() {
        for df in [1.0, 2.0, 3.0, 5.0, 9.0, 19.0, 29.0, 100.0, 1000.0] {
            let reference = StudentsT::new(0.0, 1.0, df).unwrap();
            for p in [0.6, 0.9, 0.95, 0.975, 0.995] {
                let ours = student_t_quantile(p, df);
                let theirs = reference.inverse_cdf(p);
                assert!((ours - theirs).abs() < 1e-6, "df {df} p {p}: {ours} vs {theirs}");
            }
        }
        assert!((student_t_quantile(0.975, 1.0) - 12.706_204_736).abs() < 1e-6);
    }

    #[test]
    fn ci_examples() {
        let r = ci_check(&[10.0; 5], 0.95, 0.05);
        assert_eq!(r.half_width, 0.0);
        assert!(r.sufficient);
        assert!(!ci_check(&[1.0, 100.0], 0.95, 0.05).sufficient);
        assert!(!ci_check(&[1.0], 0.95, 0.05).sufficient);
        assert!(!ci_check(&[], 0.95, 0.05).sufficient);
        // n = 30 with a 1% coefficient of variation.
        let samples: Vec<f64> = (0..30).map(|i| 100.0 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = ci_check(&samples, 0.95, 0.05);
        let t29 = StudentsT::new(0.0, 1.0, 29.0).unwrap().inverse_cdf(0.975);
        let expected = t29 * r.std_dev / 30f64.sqrt();
        assert!((r.half_width - expected).abs() < 1e-9);
        assert!(r.sufficient);
    }

    proptest! {
        #[test]
        fn adding_the_mean_never_widens(xs in prop::collection::vec(1.0f64..1000.0, 2..40)) {
            let before = ci_check(&xs, 0.95, 0.05);
            let mut more = xs.clone();
            more.push(before.mean);
            let after = ci_check(&more, 0.95, 0.05);
            prop_assert!(after.relative_half_width <= before.relative_half_width + 1e-12);
        }
    }
}
