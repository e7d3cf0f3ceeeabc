fn main() {
    std::process::exit(prefkit_cli::run(std::env::args_os()));
}
