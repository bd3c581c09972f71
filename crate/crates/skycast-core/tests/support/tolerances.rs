//! Central tolerance constants for the integration suite, each with the
//! reasoning that produced it. Keeping them in one place makes every
//! numerical comparison auditable.

/// Relative tolerance for analytic-vs-numeric gradient comparisons. The f32
/// forward/backward pass accumulates roughly 1e-6 relative rounding noise
/// through the deepest test network, and central differences on the f64
/// reference carry ~1e-6 truncation error at the chosen step; 1e-4 leaves
/// two orders of magnitude of headroom while still catching any formula
/// error (which would show up at 1e-1 or worse).
pub const GRAD_REL_TOL: f64 = 1e-4;

/// Gradient elements whose analytic and numeric magnitudes both fall below
/// this floor are treated as matching zeros. Dead ReLU paths produce exact
/// zeros on the analytic side and rounding dust on the numeric side, where a
/// relative comparison would be meaningless.
pub const GRAD_ABS_FLOOR: f64 = 1e-6;

/// Central-difference step. Large enough that f64 forward rounding (~1e-16)
/// is invisible after division by 2h, small enough that the O(h²) curvature
/// term stays near 1e-6 for activations of order one.
pub const FD_STEP: f64 = 1e-3;

/// Absolute difference allowed between the f32 convolution forward pass and
/// the f64 reference, for inputs bounded to [-1, 1]. A 36-term f32 dot
/// product over such data rounds at worst near 1e-4; any indexing or padding
/// bug shifts entire taps and shows up at 0.1 or larger.
pub const CONV_FORWARD_ABS: f64 = 1e-3;

/// Solar position comparison against an independently published ephemeris
/// algorithm. Both are low-precision formulas; they agree to a few hundredths
/// of a degree over the tested years, and half a degree (the angular diameter
/// of the solar disc) is the scale at which position errors would matter to
/// any consumer in this crate.
pub const SOLAR_POSITION_DEG: f64 = 0.5;

/// Clear-sky irradiance models are smooth closed-form expressions; the frozen
/// reference values were evaluated from the same published formulation in
/// independent 64-bit arithmetic, so agreement to 1 W/m² (≲0.2% of typical
/// clear-sky GHI) verifies the implementation without constraining the model.
pub const CLEARSKY_WM2: f64 = 1.0;

/// Frozen-value checks that only guard against accidental edits of a closed
/// formula (exact expectations computed from the same expression).
pub const FROZEN_REL: f64 = 1e-9;

/// Absolute tolerance for frozen reference values recorded to four decimal
/// places (quantization bound 5e-5, with headroom).
pub const FROZEN_ABS: f64 = 1e-3;
