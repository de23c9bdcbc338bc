fn main() {
    std::process::exit(vesicle_cli::run(std::env::args_os()));
}
