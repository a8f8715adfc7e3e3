//! Write a token dump, read it back and inspect the header.
//!
//!     cargo run --example dump_roundtrip

use nalgebra::DMatrix;
use socm::tensor_io::{decode_header, encode_token_dump, read_token_dump, write_token_dump, TokenMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let texts = vec![
        TokenMatrix::from_columns(0, &[vec![1.0, 0.0, 0.5], vec![0.8, 0.2, 0.4]])?,
        TokenMatrix::new(1, DMatrix::from_fn(3, 4, |i, j| (i + j) as f64 * 0.25 + 0.1))?,
    ];

    let bytes = encode_token_dump(&texts)?;
    let header = decode_header(&bytes)?;
    println!("{} bytes, header {header:?}", bytes.len());

    let dir = std::env::temp_dir().join("socm-dump-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tokens.bin");
    write_token_dump(&texts, &path)?;
    for t in read_token_dump(&path)? {
        println!("text {}: d={} n={}", t.text_id, t.dim(), t.len());
    }

    // truncated files are rejected with the offset where data ran out
    match socm::tensor_io::decode_token_dump(&bytes[..bytes.len() - 3]) {
        Err(e) => println!("truncated: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
