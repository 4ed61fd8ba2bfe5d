fn main() {
    std::process::exit(burstsr::cli::run(std::env::args_os()));
}
