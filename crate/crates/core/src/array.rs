//! Uniform cylindrical array (UCyA) geometry and far-field steering vectors.
//!
//! Ports are ordered ring by ring (bottom to top), column by column around
//! each ring, and, for dual-polarized arrays, as co-located `+45°/-45°` pairs.
//! Elements are isotropic.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::scenario::ArrayConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    SlantPlus45,
    SlantMinus45,
    /// Single-polarized port.
    Vertical,
}

impl Polarization {
    pub fn label(self) -> &'static str {
        match self {
            Polarization::SlantPlus45 => "+45",
            Polarization::SlantMinus45 => "-45",
            Polarization::Vertical => "V",
        }
    }

    /// Amplitude coupling of a path whose polarization is rotated by `psi`
    /// from the `+45°` slant. Averaged over uniform `psi` the coupled power
    /// is one for every port; `psi = pi/4` couples with unit amplitude into
    /// both slants.
    pub fn coupling(self, psi: f64) -> f64 {
        match self {
            Polarization::SlantPlus45 => SQRT_2 * psi.cos(),
            Polarization::SlantMinus45 => SQRT_2 * psi.sin(),
            Polarization::Vertical => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementLayout {
    /// Port positions in the BS-local frame [m]; `z` is up.
    pub positions: Vec<[f64; 3]>,
    pub polarization: Vec<Polarization>,
    pub radius_m: f64,
    pub ring_heights_m: Vec<f64>,
    pub m_horizontal: usize,
}

impl ElementLayout {
    pub fn num_ports(&self) -> usize {
        self.positions.len()
    }

    pub fn ports_per_ring(&self) -> usize {
        self.num_ports() / self.ring_heights_m.len()
    }

    /// Writes `port,x_m,y_m,z_m,polarization` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "port,x_m,y_m,z_m,polarization")?;
        for (i, (p, pol)) in self.positions.iter().zip(&self.polarization).enumerate() {
            writeln!(w, "{i},{},{},{},{}", p[0], p[1], p[2], pol.label())?;
        }
        Ok(())
    }
}

/// Places `M_h` columns evenly around a cylinder so that adjacent columns are
/// `spacing * wavelength` apart along the circumference, with `M_v` rings at
/// the same vertical pitch centred on `z = 0`.
pub fn build_layout(array: &ArrayConfig, wavelength_m: f64) -> ElementLayout {
    assert!(wavelength_m > 0.0, "wavelength must be positive");
    let pitch = array.element_spacing_wavelengths * wavelength_m;
    let radius = array.m_horizontal as f64 * pitch / (2.0 * PI);
    let ring_heights: Vec<f64> = (0..array.m_vertical)
        .map(|v| (v as f64 - (array.m_vertical as f64 - 1.0) / 2.0) * pitch)
        .collect();
    let pols: &[Polarization] = if array.dual_polarized {
        &[Polarization::SlantPlus45, Polarization::SlantMinus45]
    } else {
        &[Polarization::Vertical]
    };

    let m = array.num_ports();
    let mut positions = Vec::with_capacity(m);
    let mut polarization = Vec::with_capacity(m);
    for &z in &ring_heights {
        for h in 0..array.m_horizontal {
            let phi = 2.0 * PI * h as f64 / array.m_horizontal as f64;
            let p = [radius * phi.cos(), radius * phi.sin(), z];
            for &pol in pols {
                positions.push(p);
                polarization.push(pol);
            }
        }
    }
    ElementLayout {
        positions,
        polarization,
        radius_m: radius,
        ring_heights_m: ring_heights,
        m_horizontal: array.m_horizontal,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: Vec<Complex64>,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Unit vector pointing from the array towards `(azimuth, elevation)`.
pub fn direction(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    [ce * ca, ce * sa, se]
}

/// Plane-wave response `exp(+j 2pi/lambda <p_m, u>)` with unit coupling on
/// every port.
pub fn steering(layout: &ElementLayout, azimuth: f64, elevation: f64, wavelength_m: f64) -> SteeringVector {
    let mut entries = vec![Complex64::new(0.0, 0.0); layout.num_ports()];
    accumulate(layout, azimuth, elevation, wavelength_m, None, Complex64::new(1.0, 0.0), &mut entries);
    SteeringVector {
        entries,
        azimuth,
        elevation,
    }
}

/// Like [`steering`] but each port is weighted by its coupling to a path
/// with polarization angle `psi`.
pub fn steering_polarized(
    layout: &ElementLayout,
    azimuth: f64,
    elevation: f64,
    wavelength_m: f64,
    psi: f64,
) -> SteeringVector {
    let mut entries = vec![Complex64::new(0.0, 0.0); layout.num_ports()];
    accumulate(layout, azimuth, elevation, wavelength_m, Some(psi), Complex64::new(1.0, 0.0), &mut entries);
    SteeringVector {
        entries,
        azimuth,
        elevation,
    }
}

/// Adds `gain * a(az, el)` into `out`, weighting ports by their coupling to
/// `psi` when given. This is the inner loop of channel synthesis.
pub(crate) fn accumulate(
    layout: &ElementLayout,
    azimuth: f64,
    elevation: f64,
    wavelength_m: f64,
    psi: Option<f64>,
    gain: Complex64,
    out: &mut [Complex64],
) {
    let u = direction(azimuth, elevation);
    let k = 2.0 * PI / wavelength_m;
    let mut last: Option<([f64; 3], Complex64)> = None;
    for ((p, pol), o) in layout.positions.iter().zip(&layout.polarization).zip(out.iter_mut()) {
        // co-located polarization pairs share one phase evaluation
        let phasor = match last {
            Some((q, ph)) if q == *p => ph,
            _ => {
                let phase = k * (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]);
                let ph = gain * Complex64::from_polar(1.0, phase);
                last = Some((*p, ph));
                ph
            }
        };
        *o += match psi {
            Some(psi) => phasor * pol.coupling(psi),
            None => phasor,
        };
    }
}

/// Polarization angle that couples equally into both slants.
pub const MATCHED_POLARIZATION: f64 = FRAC_PI_4;
