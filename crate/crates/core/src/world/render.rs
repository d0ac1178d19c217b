//! Observation rendering: a shared latent signal projected through fixed
//! per-patch maps plus per-patch noise.

use super::{RenderBasis, Scene, World, WorldConfig, N_NUISANCE};
use crate::error::Result;
use crate::rng;
use crate::tensor::{init, Tensor};

/// One rendered observation: a patch grid, flattenable to a vector.
#[derive(Debug, Clone)]
pub struct Observation {
    /// `[n_patches × d_patch]`
    pub patches: Tensor,
}

impl Observation {
    /// Row-major flattening of the patch grid.
    pub fn flat(&self) -> Vec<f32> {
        self.patches.data().to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.patches.is_finite()
    }
}

pub(crate) fn build_basis(seed: u64, cfg: &WorldConfig, n_categories: usize) -> Result<RenderBasis> {
    let d = cfg.d_signal;
    let mut r = rng::keyed_rng(seed, &[0xba515]);
    let unit_rows = |r: &mut rand_chacha::ChaCha8Rng, rows: usize, d: usize| -> Tensor {
        let mut t = init::normal::<f32>(r, &[rows, d], 1.0);
        let data = t.data_mut();
        for row in data.chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
            row.iter_mut().for_each(|v| *v /= n);
        }
        t
    };
    let prop_dirs = unit_rows(&mut r, cfg.n_properties, d);
    let ident_dirs = unit_rows(&mut r, n_categories, d);
    let nuis_dirs = unit_rows(&mut r, N_NUISANCE, d);
    let n_patches = cfg.grid * cfg.grid;
    let patch_maps = (0..n_patches)
        .map(|_| init::normal::<f32>(&mut r, &[d, cfg.d_patch], 1.0 / (d as f64).sqrt()))
        .collect();
    Ok(RenderBasis {
        prop_dirs,
        ident_dirs,
        nuis_dirs,
        patch_maps,
    })
}

/// Latent signal for a scene: property directions (large magnitude) +
/// category identity (small magnitude) + nuisance directions.
fn signal(world: &World, scene: &Scene) -> Vec<f32> {
    let cfg = &world.cfg;
    let d = cfg.d_signal;
    let mut x = vec![0.0f32; d];
    let spec = &world.categories[scene.category];
    let pm = cfg.property_magnitude as f32;
    for (b, &on) in spec.properties.iter().enumerate() {
        if on {
            for (xi, &u) in x.iter_mut().zip(world.basis.prop_dirs.row(b)) {
                *xi += pm * u;
            }
        }
    }
    let im = (cfg.property_magnitude * cfg.identity_ratio) as f32;
    for (xi, &u) in x.iter_mut().zip(world.basis.ident_dirs.row(scene.category)) {
        *xi += im * u;
    }
    let nm = cfg.nuisance_magnitude as f32;
    for j in 0..N_NUISANCE {
        let s = scene.nuisance[j];
        for (xi, &u) in x.iter_mut().zip(world.basis.nuis_dirs.row(j)) {
            *xi += nm * s * u;
        }
    }
    x
}

/// Render a scene deterministically from (scene, world seed). Multi-instance
/// scenes superpose the same signal `count` times, so instance count shows
/// up as magnitude.
pub fn render(world: &World, scene: &Scene) -> Observation {
    let cfg = &world.cfg;
    let x = signal(world, scene);
    let n_patches = world.n_patches();
    let dp = cfg.d_patch;
    let mut data = Vec::with_capacity(n_patches * dp);
    let count = scene.count.max(1) as f32;
    let noise_std = cfg.noise_std;
    for p in 0..n_patches {
        let map = &world.basis.patch_maps[p];
        let mut patch = vec![0.0f32; dp];
        for (si, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (pv, &m) in patch.iter_mut().zip(map.row(si)) {
                *pv += xv * m;
            }
        }
        patch.iter_mut().for_each(|v| *v *= count);
        if noise_std > 0.0 {
            let mut nr = rng::keyed_rng(world.seed, &[0x101ce, scene.instance_seed, p as u64]);
            for pv in patch.iter_mut() {
                *pv += (noise_std * gauss(&mut nr)) as f32;
            }
        }
        data.extend_from_slice(&patch);
    }
    let patches = Tensor::from_vec(&[n_patches, dp], data).unwrap();
    debug_assert!(patches.is_finite());
    Observation { patches }
}

fn gauss(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = r.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};

    #[test]
    fn rendering_is_deterministic() {
        let world = build_world(3, &WorldConfig::default()).unwrap();
        let scene = world.scene(5, 42);
        let a = render(&world, &scene);
        let b = render(&world, &scene);
        assert_eq!(a.patches.data(), b.patches.data());
    }

    #[test]
    fn zero_noise_zero_nuisance_renders_identically_per_category() {
        let cfg = WorldConfig {
            noise_std: 0.0,
            ..WorldConfig::default()
        };
        let world = build_world(4, &cfg).unwrap();
        let mut s1 = world.scene(7, 1);
        let mut s2 = world.scene(7, 2);
        s1.nuisance = [0.0; N_NUISANCE];
        s2.nuisance = [0.0; N_NUISANCE];
        let a = render(&world, &s1);
        let b = render(&world, &s2);
        assert_eq!(a.patches.data(), b.patches.data());
    }

    #[test]
    fn shared_properties_differ_only_in_identity_direction() {
        // Force two categories to identical property vectors; with zero
        // noise/nuisance the rendered difference is exactly the (small)
        // identity component.
        let cfg = WorldConfig {
            noise_std: 0.0,
            ..WorldConfig::default()
        };
        let mut world = build_world(5, &cfg).unwrap();
        let props = world.categories[0].properties.clone();
        world.categories[1].properties = props;
        let mut sa = world.scene(0, 1);
        let mut sb = world.scene(1, 1);
        sa.nuisance = [0.0; N_NUISANCE];
        sb.nuisance = [0.0; N_NUISANCE];
        let a = render(&world, &sa);
        let b = render(&world, &sb);
        let diff_norm: f32 = a
            .patches
            .data()
            .iter()
            .zip(b.patches.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f32>()
            .sqrt();
        let a_norm: f32 = a.patches.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!(diff_norm > 0.0);
        // identity magnitude is 0.25 of property magnitude; with many active
        // properties the relative difference must be well under 1.
        assert!(diff_norm < 0.75 * a_norm, "diff {diff_norm} vs norm {a_norm}");
    }
}
