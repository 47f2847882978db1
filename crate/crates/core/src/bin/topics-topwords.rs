fn main() {
    std::process::exit(topics_core::cli::topwords_main(std::env::args_os()));
}
