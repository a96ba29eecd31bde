fn main() {
    std::process::exit(aoismpc::cli::run());
}
