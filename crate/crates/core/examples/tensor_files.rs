//! Writing and reading `BKT1` tensors, and what a corrupted header reports.

use bkws::io::TensorFile;

pub fn run_example() -> bkws::Result<()> {
    let t = TensorFile::f32(vec![2, 3], vec![0.0, 0.5, 1.0, 0.25, 0.75, 1.0])?.with_metadata(r#"{"kind":"mask"}"#);
    let bytes = t.to_bytes();
    println!(
        "{} bytes, dims {:?}, metadata {:?}",
        bytes.len(),
        t.dims(),
        t.metadata()
    );
    assert_eq!(TensorFile::from_bytes(&bytes)?, t);

    let mut bad = bytes.clone();
    bad[4] = 9;
    match TensorFile::from_bytes(&bad) {
        Err(e) => println!("corrupted dtype: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    match TensorFile::from_bytes(&bytes[..bytes.len() - 2]) {
        Err(e) => println!("truncated payload: {e}"),
        Ok(_) => println!("truncation went unnoticed"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
