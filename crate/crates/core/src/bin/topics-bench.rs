fn main() {
    std::process::exit(topics_core::cli::bench_main(std::env::args_os()));
}
