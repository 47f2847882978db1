fn main() {
    std::process::exit(topics_core::cli::train_main(std::env::args_os()));
}
