fn main() {
    std::process::exit(stcgat::cli::run());
}
