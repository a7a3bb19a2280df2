fn main() {
    std::process::exit(vlaprobe::cli::run_cli(std::env::args_os()));
}
