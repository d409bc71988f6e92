fn main() {
    std::process::exit(spinpair::cli::run(std::env::args_os()));
}
