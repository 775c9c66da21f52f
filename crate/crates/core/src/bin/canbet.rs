fn main() {
    std::process::exit(canbet::cli::run());
}
