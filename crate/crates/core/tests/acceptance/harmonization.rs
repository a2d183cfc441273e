use dlharmonize::alteration::{alter_volume, AlterationConfig};
use dlharmonize::dictionary::{TrainConfig, Trainer};
use dlharmonize::evaluation::{g_confidence_interval, hedges_g, kl_symmetric};
use dlharmonize::harmonizer::{code_and_reconstruct, downsample_dictionary, harmonize, pooled_patches, Dataset, Downsample, HarmonizeConfig};
use dlharmonize::lasso::{PathConfig, Selection, SparseCoder};
use dlharmonize::metrics::{compute_all, MetricMaps};
use dlharmonize::patching::PatchConfig;
use dlharmonize::volume::{DiffusionVolume, Region};
use ndarray::Array3;

use crate::common::{crop, full_mask, gtab, masked, mean, mean_s0, phantom, rmse, trilinear};
use crate::fixtures::{gradients, scanner_a, trained, SEED, SHAPE};
use crate::Outcome;

const CROP_OFFSET: [usize; 3] = [6, 6, 6];
const CROP: [usize; 3] = [12, 12, 12];
const GAIN_B: f64 = 1.2;
/// Rician noise as a fraction of the scanner's own mean S₀.
const NOISE: f64 = 0.02;
const KL_BINS: usize = 100;
/// Harmonized KL must be at most this fraction of the raw KL.
const KL_RATIO: f64 = 0.8;

fn dataset(id: &str, vol: DiffusionVolume) -> Dataset {
    Dataset {
        id: id.into(),
        mask: full_mask(&vol),
        gtab: gradients(),
        volume: vol,
    }
}

fn maps(vol: &DiffusionVolume) -> MetricMaps {
    compute_all(vol, &gradients(), &full_mask(vol), 2, 0.0).unwrap()
}

fn harmonized(ds: &Dataset) -> DiffusionVolume {
    let cfg = HarmonizeConfig {
        rng_seed: SEED,
        ..Default::default()
    };
    harmonize(ds, &trained().dictionary, &cfg).unwrap()
}

/// Scanner acquisition cropped to the evaluation block.
fn scanner(gain: f64, seed: u64) -> DiffusionVolume {
    let sigma = NOISE * gain * mean_s0(SHAPE);
    crop(&phantom(SHAPE, &gradients(), gain, sigma, seed), CROP_OFFSET, CROP)
}

pub fn gain_and_noise() -> Outcome {
    let a = crop(scanner_a(), CROP_OFFSET, CROP);
    let b = scanner(GAIN_B, 0xb);
    let h = harmonized(&dataset("scanner-b", b.clone()));
    let mask = full_mask(&a);
    let (ma, mb, mh) = (maps(&a), maps(&b), maps(&h));
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["adc", "rish0"] {
        let va = masked(ma.get(name).unwrap(), &mask);
        let raw = kl_symmetric(&masked(mb.get(name).unwrap(), &mask), &va, KL_BINS).unwrap();
        let harm = kl_symmetric(&masked(mh.get(name).unwrap(), &mask), &va, KL_BINS).unwrap();
        let ok = harm < KL_RATIO * raw;
        pass &= ok;
        parts.push(format!(
            "{name} KL raw {raw:.4} -> harmonized {harm:.4} ({:+.0}%, need <= -{:.0}%){}",
            100.0 * (harm / raw - 1.0),
            100.0 * (1.0 - KL_RATIO),
            if ok { "" } else { " FAILED" }
        ));
    }
    let b0 = |v: &DiffusionVolume| v.channel(0).mean().unwrap();
    parts.push(format!("mean b0 A {:.0}, B {:.0}, harmonized B {:.0}", b0(&a), b0(&b), b0(&h)));
    Outcome::new(pass, parts.join("; "))
}

const LOW: [usize; 3] = [9, 9, 9];
const HIGH: [usize; 3] = [15, 15, 15];

pub fn upsampling() -> Outcome {
    let g = gtab(1, 6);
    let low = phantom(LOW, &g, 1.0, 0.0, 0);
    let truth = phantom(HIGH, &g, 1.0, 0.0, 0);
    let neighbors = 2;

    let hr = Dataset {
        id: "high".into(),
        mask: full_mask(&truth),
        gtab: g.clone(),
        volume: truth.clone(),
    };
    let coding = PathConfig {
        selection: Selection::Aic,
        ..Default::default()
    };
    let big = PatchConfig {
        spatial_size: 5,
        n_neighbors: neighbors,
        seed: SEED,
        ..Default::default()
    };
    let (omega, shape) = pooled_patches(std::slice::from_ref(&hr), &big).unwrap();
    let cfg = TrainConfig {
        n_iterations: 200,
        n_atoms: Some(256),
        path_cfg: coding,
        rng_seed: SEED,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&omega, shape, cfg).unwrap();
    while !trainer.is_done() {
        trainer.step().unwrap();
    }
    let target = trainer.into_dictionary().unwrap();

    let lr = Dataset {
        id: "low".into(),
        mask: full_mask(&low),
        gtab: g.clone(),
        volume: low.clone(),
    };
    let small = PatchConfig {
        spatial_size: 3,
        ..big
    };

    // shared coefficients: codes from the small dictionary drive the large one
    let patches = lr.patches(&small).unwrap();
    let coding_dict = downsample_dictionary(&target, 3, Downsample::default()).unwrap();
    let (recon, codes) = code_and_reconstruct(&patches.matrix, coding_dict.atoms(), target.atoms(), &coding).unwrap();
    let coder = SparseCoder::new(coding_dict.atoms().clone());
    let mut shared = recon.nrows() == target.m();
    for (i, c) in codes.iter().enumerate() {
        let again = coder.code(&patches.matrix.column(i).into_owned(), &coding, i as u64).unwrap();
        shared &= again.alpha == c.alpha;
        shared &= recon.column(i) == target.atoms() * &c.alpha;
    }

    let cfg = HarmonizeConfig {
        patch_cfg: small,
        path_cfg: coding,
        upsample_ratio: Some([5.0 / 3.0; 3]),
        downsample: Downsample::default(),
        rng_seed: SEED,
    };
    let up = harmonize(&lr, &target, &cfg).unwrap();
    let shape_ok = up.spatial_shape() == HIGH;
    let e_dict = if shape_ok { rmse(up.data(), truth.data()) } else { f64::INFINITY };
    let e_tri = rmse(&trilinear(low.data(), HIGH), truth.data());
    Outcome::new(
        shared && shape_ok && e_dict < e_tri,
        format!(
            "shared coefficients identical: {shared} ({} patches); {:?} -> {:?}; RMSE vs truth: dictionary {e_dict:.3}, trilinear {e_tri:.3}",
            codes.len(),
            LOW,
            up.spatial_shape()
        ),
    )
}

/// Lateral block of the crop: tissue in one hemisphere, clear of the central
/// CSF where added free water would barely register.
const REGION: Region = Region {
    offset: [8, 4, 4],
    shape: [4, 4, 4],
};
const CI_LEVEL: f64 = 0.95;

fn region_values(map: &Array3<f64>) -> Vec<f64> {
    REGION.voxels().map(|[x, y, z]| map[[x, y, z]]).collect()
}

pub fn alteration() -> Outcome {
    let original = scanner(1.0, 0x7a);
    let cfg = AlterationConfig {
        region: REGION,
        rng_seed: SEED,
        ..Default::default()
    };
    let (altered, _) = alter_volume(&original, &gradients(), &cfg).unwrap();
    let (mo, ma) = (maps(&original), maps(&altered));
    let (ho, ha) = (
        maps(&harmonized(&dataset("original", original))),
        maps(&harmonized(&dataset("altered", altered))),
    );
    let adc = (mean(&region_values(&ma.adc)), mean(&region_values(&mo.adc)));
    let fa = (mean(&region_values(&ma.fa)), mean(&region_values(&mo.fa)));
    let direction = adc.0 > adc.1 && fa.0 < fa.1;
    let mut pass = direction;
    let mut parts = vec![format!(
        "region ADC {:.3e} -> {:.3e}, FA {:.3} -> {:.3}",
        adc.1, adc.0, fa.1, fa.0
    )];
    for name in ["adc", "fa"] {
        let (bo, ba) = (region_values(mo.get(name).unwrap()), region_values(ma.get(name).unwrap()));
        let (lo, hi) = g_confidence_interval(&bo, &ba, CI_LEVEL).unwrap();
        let before = hedges_g(&bo, &ba).unwrap();
        let after = hedges_g(&region_values(ho.get(name).unwrap()), &region_values(ha.get(name).unwrap())).unwrap();
        let ok = lo <= after && after <= hi;
        pass &= ok;
        parts.push(format!(
            "{name} g before {before:.2} [{lo:.2}, {hi:.2}], after harmonization {after:.2}{}",
            if ok { "" } else { " OUTSIDE" }
        ));
    }
    Outcome::new(pass, parts.join("; "))
}
