fn main() {
    std::process::exit(riskadapt::cli::run());
}
