fn main() {
    std::process::exit(pacc_app::cli::run());
}
