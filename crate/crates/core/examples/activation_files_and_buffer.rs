// SPDX-License-Identifier: MIT OR Apache-2.0

//! Write activations to disk in bf16, read them back through the shuffling
//! buffer, and keep a token-text sidecar next to them.

use saekit::activations::{
    read_token_sidecar, write_activation_file, write_token_sidecar, ActivationFileReader, ActivationMeta,
    ActivationSource, DType, ShuffleBuffer, SyntheticDictionary, SyntheticSource,
};

fn main() -> saekit::Result<()> {
    let dir = std::env::temp_dir().join("saekit-example-files");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("acts.actv");

    let mut source = SyntheticSource::new(SyntheticDictionary::default_with_seed(0), 1);
    let batches: Vec<_> = (0..4).map(|_| source.next_batch(5_000)).collect::<saekit::Result<Option<Vec<_>>>>()?.unwrap_or_default();
    let mut meta = ActivationMeta::new("L12R", "synthetic");
    meta.extra.insert("note".into(), "example".into());
    let rows = write_activation_file(&path, &batches, &meta, DType::Bf16)?;
    let tokens: Vec<String> = (0..rows).map(|i| format!(" t{i}")).collect();
    write_token_sidecar(path.with_extension("tokens"), &tokens)?;

    let reader = ActivationFileReader::open(&path)?;
    println!("{rows} rows of D={} ({:?}), position {}", reader.d_model(), reader.dtype(), reader.meta().position);

    let mut buffer = ShuffleBuffer::new(reader, 8_000, 42)?;
    let mut seen = 0;
    while let Some(batch) = buffer.next_batch(1_000)? {
        seen += batch.len();
    }
    println!("drained {seen} rows over {} refills", buffer.refills());
    println!("sidecar holds {} tokens", read_token_sidecar(path.with_extension("tokens"))?.len());
    Ok(())
}
