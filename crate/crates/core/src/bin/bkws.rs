fn main() {
    let threads = match std::env::var("BKWS_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("bkws: BKWS_THREADS must be a non-negative integer, got {v:?}");
                std::process::exit(1);
            }
        },
        Err(_) => 0,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("global pool is configured once");
    }
    std::process::exit(bkws::cli::run(std::env::args_os()));
}
