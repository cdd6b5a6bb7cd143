fn main() {
    std::process::exit(catdiff_cli::run(std::env::args_os()));
}
