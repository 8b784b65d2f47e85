//! Haar analysis of the synthetic corpus: subband energies per class.
//!
//! ```text
//! cargo run --release --example wavelet_profile
//! ```

use waveopt::pipeline::{gen_corpus, CorpusSpec};
use waveopt::wavelet::{energy, frequency_profile, haar_dwt, haar_idwt, EqualizeConfig};
use waveopt::Result;

fn main() -> Result<()> {
    let spec = CorpusSpec::default();
    let corpus = gen_corpus(&spec)?;
    let eq = EqualizeConfig::default();

    let first = &corpus.images[0].image;
    let bands = haar_dwt(first)?;
    let back = haar_idwt(&bands)?;
    println!(
        "round trip max error {:.2e}, energy {:.6} vs subbands {:.6}",
        back.max_abs_diff(first)?,
        energy(first),
        bands.total_energy()
    );

    println!("{:<8} {:>5} {:>10} {:>10}", "class", "image", "E(x_LL)", "E(x_SUM)");
    for (i, im) in corpus.images.iter().enumerate() {
        let p = frequency_profile(&im.image, &eq)?;
        println!(
            "{:<8} {:>5} {:>10.3} {:>10.4}",
            spec.classes[im.class].name, i, p.energy_ll, p.energy_sum
        );
    }
    for (c, class) in spec.classes.iter().enumerate() {
        let profiles: Vec<_> = corpus
            .images
            .iter()
            .filter(|im| im.class == c)
            .map(|im| frequency_profile(&im.image, &eq))
            .collect::<Result<_>>()?;
        let n = profiles.len() as f64;
        println!(
            "mean {:<8} E(x_LL) {:.3}  E(x_SUM) {:.4}",
            class.name,
            profiles.iter().map(|p| p.energy_ll).sum::<f64>() / n,
            profiles.iter().map(|p| p.energy_sum).sum::<f64>() / n
        );
    }
    Ok(())
}
