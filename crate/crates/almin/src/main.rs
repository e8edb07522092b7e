fn main() {
    std::process::exit(almin::cli::run());
}
