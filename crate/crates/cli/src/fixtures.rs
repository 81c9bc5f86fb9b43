//! Built-in 8x8 gradient-check scene, the same files as `fixtures/scene8`.

use anyhow::{Context, Result};
use crffuse_core::{DepthMap, RgbImage, SideOutputStack};

use crate::io::{decode_pfm, decode_ppm};

const IMAGE: &[u8] = include_bytes!("../fixtures/scene8/image.ppm");
const GT: &[u8] = include_bytes!("../fixtures/scene8/gt.pfm");
const SIDES: [&[u8]; 3] = [
    include_bytes!("../fixtures/scene8/side_1.pfm"),
    include_bytes!("../fixtures/scene8/side_2.pfm"),
    include_bytes!("../fixtures/scene8/side_3.pfm"),
];

pub fn gradcheck_scene() -> Result<(RgbImage, SideOutputStack, DepthMap)> {
    let image = decode_ppm(IMAGE).context("built-in fixture image")?;
    let gt = decode_pfm(GT).context("built-in fixture ground truth")?;
    let sides = SIDES.iter().map(|b| decode_pfm(b)).collect::<Result<Vec<_>>>()?;
    Ok((image, SideOutputStack::new(sides)?, gt))
}
