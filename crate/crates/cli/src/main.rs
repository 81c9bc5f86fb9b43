fn main() {
    std::process::exit(crffuse_cli::run(std::env::args_os()));
}
