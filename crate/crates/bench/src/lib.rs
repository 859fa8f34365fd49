//! Shared fixtures for the criterion benches.

use subst_core::commerce::CommerceParams;

/// Product counts the benches sweep over.
pub const SIZES: [usize; 3] = [3, 4, 5];

pub fn params(products: usize) -> CommerceParams {
    CommerceParams::with_products(products)
}
