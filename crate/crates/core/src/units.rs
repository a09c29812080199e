//! Physical constants and the handful of unit conversions used everywhere.

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const THZ: f64 = 1e12;
pub const GHZ: f64 = 1e9;

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[inline]
pub fn dbm_to_watt(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

#[inline]
pub fn watt_to_dbm(w: f64) -> f64 {
    linear_to_db(w / 1e-3)
}

/// dB/km to natural power attenuation in 1/km.
#[inline]
pub fn db_per_km_to_per_km(alpha_db: f64) -> f64 {
    alpha_db * std::f64::consts::LN_10 / 10.0
}

/// Vacuum wavelength in nm of a frequency in THz.
#[inline]
pub fn thz_to_nm(f_thz: f64) -> f64 {
    SPEED_OF_LIGHT / (f_thz * THZ) * 1e9
}

/// Photon energy times bandwidth, `h·f·B`, in W.
#[inline]
pub fn photon_noise_power(f_thz: f64, b_ghz: f64) -> f64 {
    PLANCK * f_thz * THZ * b_ghz * GHZ
}
