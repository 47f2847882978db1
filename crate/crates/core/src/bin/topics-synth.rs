fn main() {
    std::process::exit(topics_core::cli::synth_main(std::env::args_os()));
}
