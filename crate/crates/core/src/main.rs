fn main() {
    std::process::exit(semexpand::cli::run(std::env::args_os()));
}
