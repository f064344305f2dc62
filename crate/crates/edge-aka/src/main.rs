fn main() {
    std::process::exit(edge_aka::cli::run());
}
