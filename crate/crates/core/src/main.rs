fn main() {
    std::process::exit(noise_stability::verify::cli::run(std::env::args_os()));
}
